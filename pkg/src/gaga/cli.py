"""Command-line surface: model generation, fitting, rendering, export, bench, serve.

Exit codes: 0 ok, 2 bad arguments, 3 file-format error, 4 numeric failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import head_model as hm
from .errors import FormatError, NumericError
from .fitting import FitConfig, Reenactor, fit_avatar, history_to_csv, make_synthetic_targets
from .losses import LossWeights


def _parse_sparse(text: str | None, dim: int, name: str) -> np.ndarray | None:
    """Parse 'i:v,i:v' into a dense coefficient vector (None stays None)."""
    if text is None or text == "":
        return None
    vec = np.zeros(dim)
    for chunk in text.split(","):
        try:
            idx_s, val_s = chunk.split(":")
            idx, val = int(idx_s), float(val_s)
        except ValueError:
            raise click.UsageError(
                f"--{name} expects 'index:value' pairs separated by commas, got {chunk!r}")
        if not 0 <= idx < dim:
            raise click.UsageError(f"--{name} index {idx} out of range [0, {dim})")
        if not np.isfinite(val):
            raise NumericError(f"--{name} value for index {idx} is not finite")
        vec[idx] = val
    return vec


@click.group()
def cli():
    """Dual-lifting Gaussian head avatars: fit, drive, export."""


@cli.group()
def model():
    """Blendshape model utilities."""


@model.command("gen")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--vertices", type=int, default=1024, show_default=True)
@click.option("--n-beta", type=int, default=32, show_default=True)
@click.option("--n-psi", type=int, default=32, show_default=True)
@click.option("--n-theta", type=int, default=12, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def model_gen(seed, vertices, n_beta, n_psi, n_theta, out):
    """Generate a procedural toy head model and write it as a model file."""
    m = hm.generate_toy_model(seed=seed, num_vertices=vertices, n_beta=n_beta,
                              n_psi=n_psi, n_theta=n_theta)
    hm.save_model(m, out)
    click.echo(f"wrote {out} (V={m.num_vertices}, beta={n_beta}, "
               f"theta={n_theta}, psi={n_psi}, hash={m.content_hash()})")


@cli.group()
def targets():
    """Target-set utilities."""


@targets.command("gen")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--resolution", type=int, default=128, show_default=True)
@click.option("--grid-res", type=int, default=64, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
def targets_gen(model_path, seed, resolution, grid_res, out):
    """Render a synthetic multi-view target set from a ground-truth avatar."""
    from .io_formats import save_targets
    m = hm.load_model(model_path)
    tset, _ = make_synthetic_targets(m, seed=seed, grid_res=grid_res,
                                     resolution=resolution)
    save_targets(tset, out)
    n_train = len(tset.train())
    click.echo(f"wrote {len(tset.items)} targets to {out} "
               f"({n_train} train, {len(tset.items) - n_train} holdout)")


@cli.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--targets", "targets_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--iters", type=int, default=2000, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--batch", type=int, default=1, show_default=True)
@click.option("--lambda-p", type=float, default=1.0, show_default=True)
@click.option("--lambda-l", type=float, default=0.1, show_default=True)
@click.option("--decoder", type=click.Choice(["affine", "conv"]), default="affine", show_default=True)
@click.option("--grid-res", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def fit(model_path, targets_dir, out, iters, lr, batch, lambda_p, lambda_l,
        decoder, grid_res, seed):
    """Fit an avatar to a target directory; loss history CSV lands beside --out."""
    from .io_formats import load_targets, save_avatar
    m = hm.load_model(model_path)
    tset = load_targets(targets_dir)
    config = FitConfig(iterations=iters, learning_rate=lr, batch=batch,
                       weights=LossWeights(lambda_p=lambda_p, lambda_l=lambda_l),
                       seed=seed, grid_res=grid_res, decoder_mode=decoder)
    result = fit_avatar(m, tset, config)
    save_avatar(result.avatar, m, out)
    csv_path = out.with_suffix(".loss.csv")
    history_to_csv(result.history, csv_path)
    final = result.history[-1]["total"] if result.history else float("nan")
    click.echo(f"wrote {out} and {csv_path} (final loss {final:.6g})")


@cli.command()
@click.option("--avatar", "avatar_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--yaw", type=float, default=0.0, show_default=True)
@click.option("--pitch", type=float, default=0.0, show_default=True)
@click.option("--dist", type=float, default=2.6, show_default=True)
@click.option("--fov", type=float, default=35.0, show_default=True)
@click.option("--psi", type=str, default=None, help="sparse coefficients 'i:v,i:v'")
@click.option("--theta", type=str, default=None, help="sparse coefficients 'i:v,i:v'")
@click.option("--resolution", type=int, default=256, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def render(avatar_path, yaw, pitch, dist, fov, psi, theta, resolution, out):
    """Render one reenacted frame to a PNG."""
    from .io_formats import load_avatar, write_png
    from .service import render_orbit_frame
    avatar, m = load_avatar(avatar_path)
    _, n_theta, n_psi = m.dims
    psi_vec = _parse_sparse(psi, n_psi, "psi")
    theta_vec = _parse_sparse(theta, n_theta, "theta")
    reenactor = Reenactor(avatar, m)
    img = render_orbit_frame(reenactor, yaw, pitch, dist, fov, resolution,
                             psi_vec, theta_vec)
    if not np.all(np.isfinite(img)):
        raise NumericError("rendered image contains non-finite values")
    write_png(out, img)
    click.echo(f"wrote {out}")


@cli.command("export-ply")
@click.option("--avatar", "avatar_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--threshold", type=float, default=0.5, show_default=True,
              help="drop Gaussians with opacity below this")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def export_ply_cmd(avatar_path, threshold, out):
    """Export the avatar's neutral-expression Gaussians as a binary PLY."""
    from .io_formats import export_ply, load_avatar
    from .lifting import merge_clouds, GaussianCloud
    avatar, m = load_avatar(avatar_path)
    reenactor = Reenactor(avatar, m)
    reenactor._prepare()
    positions = hm.evaluate(m, hm.ExpressionParams.zeros(m))
    feats, opac, scales, rots = reenactor._attr
    expr = GaussianCloud(positions=positions, rotations=rots, scales=scales,
                         opacities=opac, features=feats)
    lift = reenactor._lift_cloud
    merged = merge_clouds(lift, expr)
    sheet_ids = np.concatenate([
        np.zeros(lift.positions.shape[0] // 2, dtype=np.uint8),
        np.ones(lift.positions.shape[0] - lift.positions.shape[0] // 2, dtype=np.uint8),
        np.full(positions.shape[0], 2, dtype=np.uint8),
    ])
    count = export_ply(merged, out, opacity_threshold=threshold, sheet_ids=sheet_ids)
    click.echo(f"wrote {out} ({count} of {merged.positions.shape[0]} points)")


@cli.command()
@click.option("--avatar", "avatar_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--points", type=int, default=100_000, show_default=True,
              help="synthetic cloud size when no avatar is given")
@click.option("--channels", type=int, default=32, show_default=True)
@click.option("--resolution", type=int, default=512, show_default=True)
@click.option("--frames", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="write the JSON report here instead of stdout")
def bench(avatar_path, points, channels, resolution, frames, seed, out):
    """Time the renderer and report per-stage milliseconds as one JSON object."""
    from .camera import orbit_camera
    from .rasterizer import RenderSettings, bench as run_bench
    from .lifting import GaussianCloud, merge_clouds
    if avatar_path is not None:
        from .io_formats import load_avatar
        avatar, m = load_avatar(avatar_path)
        reenactor = Reenactor(avatar, m)
        reenactor._prepare()
        positions = hm.evaluate(m, hm.ExpressionParams.zeros(m))
        feats, opac, scales, rots = reenactor._attr
        expr = GaussianCloud(positions=positions, rotations=rots, scales=scales,
                             opacities=opac, features=feats)
        cloud = merge_clouds(reenactor._lift_cloud, expr)
        channels = cloud.features.shape[1]
    else:
        rng = np.random.default_rng(seed)
        n = points
        q = rng.normal(size=(n, 4))
        cloud = GaussianCloud(
            positions=rng.uniform(-0.8, 0.8, size=(n, 3)),
            rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
            scales=np.exp(rng.uniform(np.log(5e-3), np.log(2e-2), size=(n, 3))),
            opacities=rng.uniform(0.2, 0.95, size=n),
            features=rng.uniform(0.0, 1.0, size=(n, channels)),
        )
    camera = orbit_camera(0.0, 0.0, 2.6, 35.0, resolution)
    report = run_bench(cloud, camera, RenderSettings(), frames=frames)
    text = json.dumps(report, indent=2, sort_keys=True)
    if out is not None:
        Path(out).write_text(text + "\n")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@cli.command()
@click.option("--avatar", "avatar_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--max-res", type=int, default=512, show_default=True)
@click.option("--static", "static_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None,
              help="directory with the browser viewer bundle, served at /")
def serve(avatar_path, host, port, max_res, static_dir):
    """Run the HTTP reenactment service."""
    from .io_formats import load_avatar
    from .service import serve as run_serve
    avatar, m = load_avatar(avatar_path)
    if static_dir is None:
        candidate = Path("frontend") / "dist"
        if (candidate / "index.html").is_file():
            static_dir = candidate
    click.echo(f"serving on http://{host}:{port} (max resolution {max_res})")
    run_serve(avatar, m, host=host, port=port, max_resolution=max_res,
              static_dir=static_dir)


def main(argv=None):
    try:
        return cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except FormatError as exc:
        click.echo(f"format error: {exc}", err=True)
        sys.exit(3)
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(4)


if __name__ == "__main__":
    main()
