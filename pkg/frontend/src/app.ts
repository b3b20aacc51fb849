import { fetchMeta } from "./api";
import { bindOrbit } from "./orbit";
import { RenderPipeline, type FrameStats } from "./pipeline";
import { buildSliders } from "./sliders";
import { initialState, type Meta, type ViewerState } from "./types";

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function showBanner(root: HTMLElement, message: string, retry: () => void) {
  const banner = el("div", "banner");
  banner.append(el("span", "", message));
  const button = el("button", "", "retry");
  button.addEventListener("click", retry);
  banner.appendChild(button);
  root.appendChild(banner);
}

/** displayed-frame rate over a sliding one second window */
class FpsMeter {
  private stamps: number[] = [];

  tick(now: number): number {
    this.stamps.push(now);
    while (this.stamps.length && this.stamps[0] <= now - 1000) this.stamps.shift();
    return this.stamps.length;
  }
}

/** fetch /meta, build the controls, start the render loop */
export async function init(root: HTMLElement, base = ""): Promise<void> {
  root.innerHTML = "";
  let meta: Meta;
  try {
    meta = await fetchMeta(base);
  } catch (e) {
    const msg = e instanceof Error ? e.message : String(e);
    showBanner(root, `service unreachable: ${msg}`, () => void init(root, base));
    return;
  }

  let state = initialState(meta);

  const stats = el("div", "stats", "waiting for first frame");
  const errorLine = el("div", "error-line");
  const viewport = el("div", "viewport");
  const img = el("img");
  img.draggable = false;
  img.alt = "rendered avatar";
  viewport.appendChild(img);

  const resolution = el("select", "resolution");
  for (const r of meta.resolutions) {
    const opt = el("option", "", `${r} px`);
    opt.value = String(r);
    opt.selected = r === state.resolution;
    resolution.appendChild(opt);
  }

  const topBar = el("div", "top-bar");
  topBar.append(el("span", "title", `avatar ${meta.avatar_id.slice(0, 8)}`),
                resolution, stats);
  const panel = el("div", "panel");
  const main = el("div", "main");
  main.append(viewport, errorLine);
  const layout = el("div", "layout");
  layout.append(main, panel);
  root.append(topBar, layout);

  const fps = new FpsMeter();
  let shownUrl: string | null = null;
  const display = (blob: Blob, frame: FrameStats) => {
    const url = URL.createObjectURL(blob);
    img.src = url;
    if (shownUrl) URL.revokeObjectURL(shownUrl);
    shownUrl = url;
    errorLine.textContent = "";
    const rate = fps.tick(performance.now());
    stats.textContent = frame.fromCache
      ? `cached  ${rate} fps`
      : `server ${frame.serverMs.toFixed(0)} ms  round trip ${frame.totalMs.toFixed(0)} ms  ${rate} fps`;
  };
  const error = (message: string) => {
    errorLine.textContent = message;
  };

  const pipeline = new RenderPipeline(base, meta, { display, error });
  const push = (next: ViewerState) => {
    state = next;
    pipeline.update(state);
  };

  bindOrbit(viewport, () => state, push);
  buildSliders(panel, meta, (c) => {
    const values = state[c.block].slice();
    values[c.index] = c.value;
    push({ ...state, [c.block]: values });
  });
  resolution.addEventListener("change", () => {
    push({ ...state, resolution: parseInt(resolution.value, 10) });
  });

  pipeline.update(state);
}
