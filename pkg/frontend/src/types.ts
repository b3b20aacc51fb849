/** shape of GET /meta */
export interface Meta {
  api: number;
  avatar_id: string;
  vertex_count: number;
  n_beta: number;
  n_theta: number;
  n_psi: number;
  slider_range: [number, number];
  resolutions: number[];
  max_resolution: number;
  decoder_mode: string;
  grid_res: number;
}

/** everything the server needs for one frame, plus nothing it does not */
export interface ViewerState {
  yaw: number;
  pitch: number;
  distance: number;
  fov: number;
  psi: number[];
  theta: number[];
  resolution: number;
}

export function initialState(meta: Meta): ViewerState {
  const res = meta.resolutions.includes(256)
    ? 256
    : meta.resolutions[meta.resolutions.length - 1];
  return {
    yaw: 0,
    pitch: 0,
    distance: 2.6,
    fov: 35,
    psi: new Array(meta.n_psi).fill(0),
    theta: new Array(meta.n_theta).fill(0),
    resolution: res,
  };
}
