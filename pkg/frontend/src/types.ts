/** Wire types mirroring the segwild HTTP schema. */

export interface CameraPose {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  R: number[]; // 9 entries, row-major world-to-camera
  t: number[]; // 3 entries
}

export interface SegmentResponse {
  segmentation_id: string;
  indices: number[];
  tau: number;
  n_prompts: number;
  n_cut?: number;
  n_dropped?: number;
  elapsed_ms?: number;
}

export interface ServerState {
  session_id: string;
  scene_path: string;
  n_gaussians: number;
  trained: boolean;
  prompt_sets: Record<string, { points: [number, number][]; camera: string | null }>;
  segmentations: string[];
  cameras: string[];
}

export type MaskSource =
  | { type: 'none' }
  | { type: 'bank'; manifest: string }
  | { type: 'polygon'; points: [number, number][] }
  | { type: 'upload'; png_base64: string };
