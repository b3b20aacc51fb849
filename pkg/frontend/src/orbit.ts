import type { ViewerState } from "./types";

export const YAW_PER_PIXEL = 0.4;
export const PITCH_PER_PIXEL = 0.3;

/** drag by (dx, dy) screen pixels; drag right orbits right, drag up looks down */
export function applyDrag(state: ViewerState, dx: number, dy: number): ViewerState {
  return {
    ...state,
    yaw: state.yaw + dx * YAW_PER_PIXEL,
    pitch: state.pitch - dy * PITCH_PER_PIXEL,
  };
}

/** wheel dolly, exponential so zoom speed feels constant at any distance */
export function applyWheel(state: ViewerState, deltaY: number): ViewerState {
  return { ...state, distance: state.distance * Math.exp(deltaY * 0.001) };
}

/** pointer-drag orbit and wheel dolly on the given element */
export function bindOrbit(el: HTMLElement, view: () => ViewerState,
                          push: (s: ViewerState) => void) {
  let dragging = false;
  let lastX = 0;
  let lastY = 0;

  el.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    el.setPointerCapture(ev.pointerId);
  });
  el.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    push(applyDrag(view(), dx, dy));
  });
  const stop = () => { dragging = false; };
  el.addEventListener("pointerup", stop);
  el.addEventListener("pointercancel", stop);
  el.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    push(applyWheel(view(), ev.deltaY));
  }, { passive: false });
}
