import type { Meta, ViewerState } from "./types";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

const defaultFetch: FetchFn = (input, init) => globalThis.fetch(input, init);

export interface FrameResult {
  blob: Blob;
  serverMs: number; // render time reported by the X-Render-Ms header
  totalMs: number;  // full round trip as seen from here
}

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ServiceError";
  }
}

/** flatten {detail: string | [{field, message}]} into one readable line */
export function formatDetail(body: unknown): string {
  if (body && typeof body === "object" && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    if (typeof detail === "string") return detail;
    if (Array.isArray(detail)) {
      return detail
        .map((e) => (e && typeof e === "object" && "field" in e && "message" in e
          ? `${(e as any).field}: ${(e as any).message}`
          : JSON.stringify(e)))
        .join("; ");
    }
  }
  return JSON.stringify(body);
}

async function readDetail(resp: Response): Promise<string> {
  try {
    return formatDetail(await resp.json());
  } catch {
    return `http ${resp.status}`;
  }
}

export async function fetchMeta(base = "", fetchFn: FetchFn = defaultFetch): Promise<Meta> {
  const resp = await fetchFn(`${base}/meta`);
  if (!resp.ok) throw new ServiceError(resp.status, await readDetail(resp));
  return (await resp.json()) as Meta;
}

export function requestBody(state: ViewerState) {
  return {
    yaw: state.yaw,
    pitch: state.pitch,
    distance: state.distance,
    fov: state.fov,
    psi: state.psi,
    theta: state.theta,
    resolution: state.resolution,
  };
}

export async function renderFrame(base: string, state: ViewerState,
                                  fetchFn: FetchFn = defaultFetch): Promise<FrameResult> {
  const t0 = performance.now();
  const resp = await fetchFn(`${base}/render`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(requestBody(state)),
  });
  if (!resp.ok) throw new ServiceError(resp.status, await readDetail(resp));
  const blob = await resp.blob();
  const serverMs = parseFloat(resp.headers.get("x-render-ms") ?? "0");
  return { blob, serverMs, totalMs: performance.now() - t0 };
}
