/** Typed client for the segwild HTTP service. */

import type { CameraPose, MaskSource, SegmentResponse, ServerState } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<never> {
  let code = 'unknown';
  let message = response.statusText;
  try {
    const body = await response.json();
    code = body.detail?.code ?? code;
    message = body.detail?.message ?? message;
  } catch {
    // not JSON; keep the status text
  }
  throw new ApiError(response.status, code, message);
}

export class Client {
  constructor(
    private base = '',
    private sessionId = 'default',
  ) {}

  private async postJson<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const response = await fetch(`${this.base}${path}`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) {
      await parseError(response);
    }
    return response.json() as Promise<T>;
  }

  async health(): Promise<{ status: string; version: string }> {
    const response = await fetch(`${this.base}/health`);
    return response.json();
  }

  async loadScene(path: string): Promise<{ n_gaussians: number; trained: boolean }> {
    return this.postJson('/scene/load', { path, session_id: this.sessionId });
  }

  async state(): Promise<ServerState> {
    const response = await fetch(
      `${this.base}/state?session_id=${encodeURIComponent(this.sessionId)}`,
    );
    if (!response.ok) {
      await parseError(response);
    }
    return response.json();
  }

  /** Server-rendered frame for an inline pose; returns a PNG blob. */
  async renderFrame(
    camera: CameraPose,
    mode: 'color' | 'feature_pca' | 'depth' = 'color',
    signal?: AbortSignal,
  ): Promise<Blob> {
    const response = await fetch(`${this.base}/render`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ camera, mode, session_id: this.sessionId }),
      signal,
    });
    if (!response.ok) {
      await parseError(response);
    }
    return response.blob();
  }

  async postPrompts(camera: CameraPose, points: [number, number][]): Promise<string> {
    const body = await this.postJson<{ prompt_set_id: string }>('/prompts', {
      camera_inline: camera,
      points,
      session_id: this.sessionId,
    });
    return body.prompt_set_id;
  }

  async segment(
    promptSetId: string,
    tau: number,
    useSgc: boolean,
    maskSource: MaskSource,
    signal?: AbortSignal,
  ): Promise<SegmentResponse> {
    return this.postJson(
      '/segment',
      {
        prompt_set: promptSetId,
        tau,
        use_sgc: useSgc,
        mask_source: maskSource,
        session_id: this.sessionId,
      },
      signal,
    );
  }

  /** The mask bitmap always comes back as server-encoded PNG bytes. */
  async segmentationMask(segmentationId: string, signal?: AbortSignal): Promise<Blob> {
    const response = await fetch(
      `${this.base}/segmentation/${segmentationId}/mask.png?session_id=${encodeURIComponent(this.sessionId)}`,
      { signal },
    );
    if (!response.ok) {
      await parseError(response);
    }
    return response.blob();
  }

  async exportSelection(segmentationId: string, path: string): Promise<{ path: string }> {
    return this.postJson('/export', {
      segmentation_id: segmentationId,
      path,
      session_id: this.sessionId,
    });
  }
}
