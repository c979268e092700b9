/** App wiring: DOM events -> state transitions -> server round-trips. */

import { ApiError, Client } from './api.js';
import { debounce, SingleFlight } from './flight.js';
import { orbitToPose, rotateOrbit, zoomOrbit } from './orbit.js';
import {
  addPrompt,
  canSegment,
  canvasToImage,
  clearPrompts,
  initialState,
  restoreFromServer,
  setTau,
  undoPrompt,
  ViewerState,
} from './state.js';
import { drawScene } from './overlay.js';
import type { MaskSource } from './types.js';

const FRAME_SIZE = 512;
const TAU_DEBOUNCE_MS = 250;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  private state: ViewerState = initialState();
  private client = new Client('');
  private canvas = el<HTMLCanvasElement>('view');
  private ctx = this.canvas.getContext('2d')!;
  private frame: ImageBitmap | null = null;
  private mask: ImageBitmap | null = null;
  private renderFlight = new SingleFlight();
  private segmentFlight = new SingleFlight();
  private maskSource: MaskSource = { type: 'none' };

  private refreshOverlayDebounced = debounce(() => {
    void this.refreshOverlay();
  }, TAU_DEBOUNCE_MS);

  async start(): Promise<void> {
    this.canvas.width = FRAME_SIZE;
    this.canvas.height = FRAME_SIZE;
    this.bindControls();
    try {
      const health = await this.client.health();
      el<HTMLSpanElement>('status').textContent = `server ${health.version}`;
      const server = await this.client.state();
      if (server.n_gaussians > 0) {
        this.state = restoreFromServer(this.state, server);
        el<HTMLSpanElement>('scene-info').textContent =
          `${server.n_gaussians} Gaussians${server.trained ? ' (trained)' : ''}`;
        await this.refreshFrame();
        if (this.state.prompts.length) {
          await this.refreshOverlay();
        }
      }
    } catch (err) {
      this.toast(err);
    }
    this.syncControls();
  }

  private bindControls(): void {
    let dragStart: [number, number] | null = null;
    let dragged = false;

    this.canvas.addEventListener('pointerdown', (ev) => {
      dragStart = [ev.clientX, ev.clientY];
      dragged = false;
    });
    this.canvas.addEventListener('pointermove', (ev) => {
      if (!dragStart) return;
      const dx = ev.clientX - dragStart[0];
      const dy = ev.clientY - dragStart[1];
      if (Math.hypot(dx, dy) > 4) dragged = true;
      if (dragged) {
        this.state = { ...this.state, orbit: rotateOrbit(this.state.orbit, dx, dy) };
        dragStart = [ev.clientX, ev.clientY];
        this.scheduleFrame();
      }
    });
    this.canvas.addEventListener('pointerup', (ev) => {
      const wasDrag = dragged;
      dragStart = null;
      dragged = false;
      if (!wasDrag) this.onClick(ev);
    });
    this.canvas.addEventListener('wheel', (ev) => {
      ev.preventDefault();
      this.state = { ...this.state, orbit: zoomOrbit(this.state.orbit, ev.deltaY) };
      this.scheduleFrame();
    });

    el<HTMLInputElement>('tau').addEventListener('input', (ev) => {
      const value = Number((ev.target as HTMLInputElement).value);
      this.state = setTau(this.state, value);
      el<HTMLSpanElement>('tau-value').textContent = this.state.tau.toFixed(2);
      if (canSegment(this.state)) this.refreshOverlayDebounced();
    });
    el<HTMLInputElement>('sgc').addEventListener('change', (ev) => {
      this.state = { ...this.state, useSgc: (ev.target as HTMLInputElement).checked };
      if (canSegment(this.state)) this.refreshOverlayDebounced();
    });
    el<HTMLInputElement>('opacity').addEventListener('input', (ev) => {
      this.state = {
        ...this.state,
        overlayOpacity: Number((ev.target as HTMLInputElement).value),
      };
      this.draw();
    });
    el<HTMLButtonElement>('undo').addEventListener('click', () => {
      this.state = undoPrompt(this.state);
      this.mask = null;
      this.draw();
      this.syncControls();
      if (canSegment(this.state)) void this.refreshOverlay();
    });
    el<HTMLButtonElement>('clear').addEventListener('click', () => {
      this.state = clearPrompts(this.state);
      this.mask = null;
      this.draw();
      this.syncControls();
    });
    el<HTMLButtonElement>('segment').addEventListener('click', () => {
      void this.refreshOverlay();
    });
    el<HTMLButtonElement>('load').addEventListener('click', () => {
      void this.loadScene(el<HTMLInputElement>('scene-path').value);
    });
    el<HTMLButtonElement>('export').addEventListener('click', () => {
      void this.exportSelection();
    });
  }

  private onClick(ev: PointerEvent): void {
    if (!this.frame) return;
    const rect = this.canvas.getBoundingClientRect();
    const point = canvasToImage(ev.clientX, ev.clientY, rect,
      this.frame.width, this.frame.height);
    if (!point) {
      this.toast('click outside the frame ignored');
      return;
    }
    this.state = addPrompt(this.state, point);
    this.draw();
    this.syncControls();
    void this.refreshOverlay();
  }

  private async loadScene(path: string): Promise<void> {
    try {
      const info = await this.client.loadScene(path);
      el<HTMLSpanElement>('scene-info').textContent =
        `${info.n_gaussians} Gaussians${info.trained ? ' (trained)' : ''}`;
      this.state = clearPrompts(this.state);
      this.mask = null;
      await this.refreshFrame();
    } catch (err) {
      this.toast(err);
    }
    this.syncControls();
  }

  private scheduleFrame = debounce(() => {
    void this.refreshFrame();
  }, 40);

  private pose() {
    return orbitToPose(this.state.orbit, FRAME_SIZE, FRAME_SIZE);
  }

  private async refreshFrame(): Promise<void> {
    const result = await this.renderFlight.run(async (signal) => {
      const blob = await this.client.renderFrame(this.pose(), 'color', signal);
      return createImageBitmap(blob);
    }).catch((err) => {
      this.toast(err);
      return null;
    });
    if (result) {
      this.frame = result;
      this.mask = null; // stale for the new viewpoint
      this.draw();
    }
  }

  /** POST /segment with the current prompts and controls, then fetch the
   * server-encoded mask PNG and blend it over the frame. */
  private async refreshOverlay(): Promise<void> {
    if (!canSegment(this.state)) return;
    const started = performance.now();
    const spin = el<HTMLSpanElement>('latency');
    spin.textContent = '...';
    const result = await this.segmentFlight.run(async (signal) => {
      const promptSetId = await this.client.postPrompts(this.pose(), this.state.prompts);
      const seg = await this.client.segment(
        promptSetId, this.state.tau, this.state.useSgc, this.maskSource, signal);
      const maskBlob = await this.client.segmentationMask(seg.segmentation_id, signal);
      return { seg, bitmap: await createImageBitmap(maskBlob) };
    }).catch((err) => {
      this.toast(err);
      return null;
    });
    if (!result) {
      spin.textContent = '';
      return;
    }
    this.state = { ...this.state, lastSegmentationId: result.seg.segmentation_id };
    this.mask = result.bitmap;
    spin.textContent = `${Math.round(performance.now() - started)} ms, ` +
      `${result.seg.indices.length} selected`;
    this.draw();
    this.syncControls();
  }

  private async exportSelection(): Promise<void> {
    if (!this.state.lastSegmentationId) return;
    try {
      const out = await this.client.exportSelection(
        this.state.lastSegmentationId, 'exported_selection.ply');
      this.toast(`saved ${out.path}`);
    } catch (err) {
      this.toast(err);
    }
  }

  private draw(): void {
    drawScene(this.ctx, {
      frame: this.frame,
      mask: this.mask,
      prompts: this.state.prompts,
      overlayOpacity: this.state.overlayOpacity,
    });
  }

  private syncControls(): void {
    el<HTMLButtonElement>('segment').disabled = !canSegment(this.state);
    el<HTMLButtonElement>('undo').disabled = this.state.prompts.length === 0;
    el<HTMLButtonElement>('export').disabled = !this.state.lastSegmentationId;
    el<HTMLSpanElement>('prompt-count').textContent =
      String(this.state.prompts.length);
  }

  private toast(err: unknown): void {
    const box = el<HTMLDivElement>('toast');
    box.textContent = err instanceof ApiError
      ? `[${err.code}] ${err.message}`
      : String(err);
    box.classList.add('visible');
    setTimeout(() => box.classList.remove('visible'), 4000);
  }
}

window.addEventListener('DOMContentLoaded', () => {
  void new App().start();
});
