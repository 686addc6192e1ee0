/**
 * Cameras and orbit-state interaction logic.
 *
 * Camera space is right-handed with x right, y down, z forward; the view
 * matrix is returned as 12 row-major numbers [R | t] (world -> camera).
 * Orbit controls are pure state transitions so they are unit-testable.
 */

export interface CameraPose {
  position: [number, number, number];
  lookAt: [number, number, number];
  up: [number, number, number];
  verticalFov: number;
  width: number;
  height: number;
}

export function viewMatrix(cam: CameraPose): Float64Array {
  const [px, py, pz] = cam.position;
  let fx = cam.lookAt[0] - px;
  let fy = cam.lookAt[1] - py;
  let fz = cam.lookAt[2] - pz;
  const fn = Math.hypot(fx, fy, fz);
  fx /= fn; fy /= fn; fz /= fn;
  let rx = fy * cam.up[2] - fz * cam.up[1];
  let ry = fz * cam.up[0] - fx * cam.up[2];
  let rz = fx * cam.up[1] - fy * cam.up[0];
  let rn = Math.hypot(rx, ry, rz);
  if (rn < 1e-9) {
    const alt: [number, number, number] =
      Math.abs(fx) < 0.9 ? [1, 0, 0] : [0, 1, 0];
    rx = fy * alt[2] - fz * alt[1];
    ry = fz * alt[0] - fx * alt[2];
    rz = fx * alt[1] - fy * alt[0];
    rn = Math.hypot(rx, ry, rz);
  }
  rx /= rn; ry /= rn; rz /= rn;
  const dx = fy * rz - fz * ry;
  const dy = fz * rx - fx * rz;
  const dz = fx * ry - fy * rx;
  return new Float64Array([
    rx, ry, rz, -(rx * px + ry * py + rz * pz),
    dx, dy, dz, -(dx * px + dy * py + dz * pz),
    fx, fy, fz, -(fx * px + fy * py + fz * pz),
  ]);
}

// ---------------------------------------------------------------------------
// orbit interaction

export interface OrbitState {
  target: [number, number, number];
  distance: number;
  yaw: number;
  pitch: number; // clamped inside (-pi/2, pi/2)
  fov: number;
}

export const PITCH_LIMIT = Math.PI / 2 - 1e-3;
export const MIN_DISTANCE = 0.02;
const DRAG_SPEED = 0.008;
const WHEEL_SPEED = 0.001;

export function defaultOrbit(
  bboxLo: ArrayLike<number>,
  bboxHi: ArrayLike<number>,
): OrbitState {
  const target: [number, number, number] = [
    (bboxLo[0] + bboxHi[0]) / 2,
    (bboxLo[1] + bboxHi[1]) / 2,
    (bboxLo[2] + bboxHi[2]) / 2,
  ];
  const ex = bboxHi[0] - bboxLo[0];
  const ey = bboxHi[1] - bboxLo[1];
  const ez = bboxHi[2] - bboxLo[2];
  const radius = Math.hypot(ex, ey, ez) / 2 || 1;
  return { target, distance: 2.6 * radius, yaw: 0.6, pitch: 0.3, fov: 0.9 };
}

/** Pointer drag: yaw around the target, pitch clamped at the poles. */
export function applyDrag(state: OrbitState, dx: number, dy: number): OrbitState {
  if (dx === 0 && dy === 0) return state;
  const pitch = Math.min(PITCH_LIMIT,
    Math.max(-PITCH_LIMIT, state.pitch + dy * DRAG_SPEED));
  return { ...state, yaw: state.yaw + dx * DRAG_SPEED, pitch };
}

/** Wheel zoom: exponential in the delta, so equal and opposite scrolls
 * cancel. */
export function applyWheel(state: OrbitState, delta: number): OrbitState {
  const distance = Math.max(MIN_DISTANCE,
    state.distance * Math.exp(delta * WHEEL_SPEED));
  return { ...state, distance };
}

export function orbitCamera(
  state: OrbitState,
  width: number,
  height: number,
): CameraPose {
  const cp = Math.cos(state.pitch);
  const position: [number, number, number] = [
    state.target[0] + state.distance * cp * Math.cos(state.yaw),
    state.target[1] + state.distance * Math.sin(state.pitch),
    state.target[2] + state.distance * cp * Math.sin(state.yaw),
  ];
  return {
    position,
    lookAt: [...state.target],
    up: [0, 1, 0],
    verticalFov: state.fov,
    width,
    height,
  };
}

// ---------------------------------------------------------------------------
// viewer application state

export interface ViewerState {
  orbit: OrbitState;
  sceneCount: number;
  activeScene: number;
  mip: boolean;
}

export type ViewerAction =
  | { kind: "drag"; dx: number; dy: number }
  | { kind: "wheel"; delta: number }
  | { kind: "next-scene" }
  | { kind: "previous-scene" }
  | { kind: "toggle-mip" };

export function reduceViewer(state: ViewerState, action: ViewerAction): ViewerState {
  switch (action.kind) {
    case "drag":
      return { ...state, orbit: applyDrag(state.orbit, action.dx, action.dy) };
    case "wheel":
      return { ...state, orbit: applyWheel(state.orbit, action.delta) };
    case "next-scene":
      return state.sceneCount
        ? { ...state, activeScene: (state.activeScene + 1) % state.sceneCount }
        : state;
    case "previous-scene":
      return state.sceneCount
        ? {
            ...state,
            activeScene:
              (state.activeScene + state.sceneCount - 1) % state.sceneCount,
          }
        : state;
    case "toggle-mip":
      return { ...state, mip: !state.mip };
  }
}
