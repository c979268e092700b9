/** Viewer state and the pure transition helpers behind the UI controls.
 *
 * Prompt coordinates live in server image space; canvasToImage maps CSS
 * pixel positions through the canvas scaling so a click on a 2x-scaled
 * canvas yields halved coordinates.
 */

export interface OrbitParams {
  target: [number, number, number];
  distance: number;
  azimuth: number; // radians around the vertical axis
  elevation: number; // radians above the horizontal plane
}

export interface ViewerState {
  sessionId: string;
  orbit: OrbitParams;
  prompts: [number, number][];
  tau: number;
  useSgc: boolean;
  overlayOpacity: number;
  lastSegmentationId: string | null;
}

export function initialState(sessionId = 'default'): ViewerState {
  return {
    sessionId,
    orbit: { target: [0, 0, 0], distance: 8, azimuth: 0, elevation: 0.25 },
    prompts: [],
    tau: 0.5,
    useSgc: false,
    overlayOpacity: 0.45,
    lastSegmentationId: null,
  };
}

export interface CanvasRect {
  left: number;
  top: number;
  width: number; // CSS pixels
  height: number;
}

/**
 * Map a CSS-pixel click position to image coordinates, or null when the
 * click falls outside the displayed frame.
 */
export function canvasToImage(
  clientX: number,
  clientY: number,
  rect: CanvasRect,
  imageWidth: number,
  imageHeight: number,
): [number, number] | null {
  const sx = imageWidth / rect.width;
  const sy = imageHeight / rect.height;
  const u = (clientX - rect.left) * sx;
  const v = (clientY - rect.top) * sy;
  if (u < 0 || v < 0 || u >= imageWidth || v >= imageHeight) {
    return null;
  }
  return [u, v];
}

export function addPrompt(state: ViewerState, point: [number, number]): ViewerState {
  return { ...state, prompts: [...state.prompts, point] };
}

/** Drop the most recent prompt; segmentation must be re-requested. */
export function undoPrompt(state: ViewerState): ViewerState {
  if (state.prompts.length === 0) {
    return state;
  }
  return {
    ...state,
    prompts: state.prompts.slice(0, -1),
    lastSegmentationId: null,
  };
}

export function clearPrompts(state: ViewerState): ViewerState {
  return { ...state, prompts: [], lastSegmentationId: null };
}

const TAU_EPS = 1e-3;

/** Clamp tau to the open interval (0, 1) required by the server. */
export function setTau(state: ViewerState, tau: number): ViewerState {
  const clamped = Math.min(1 - TAU_EPS, Math.max(TAU_EPS, tau));
  return { ...state, tau: clamped };
}

export function canSegment(state: ViewerState): boolean {
  return state.prompts.length > 0;
}

/** Restore prompts and segmentation bookkeeping from GET /state. */
export function restoreFromServer(
  state: ViewerState,
  server: { prompt_sets: Record<string, { points: [number, number][] }>; segmentations: string[] },
): ViewerState {
  const promptIds = Object.keys(server.prompt_sets);
  const latest = promptIds[promptIds.length - 1];
  const prompts = latest ? server.prompt_sets[latest].points : [];
  const segs = server.segmentations;
  return {
    ...state,
    prompts: prompts.map((p) => [p[0], p[1]] as [number, number]),
    lastSegmentationId: segs.length ? segs[segs.length - 1] : null,
  };
}
