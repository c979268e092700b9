/** Canvas compositing of the server frame, mask overlay, and prompt
 * markers. Mask pixels are taken verbatim from the server PNG; the client
 * only tints and blends. */

const TINT: [number, number, number] = [255, 70, 40];

export interface FrameLayers {
  frame: ImageBitmap | null;
  mask: ImageBitmap | null;
  prompts: [number, number][];
  overlayOpacity: number;
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  layers: FrameLayers,
): void {
  const { canvas } = ctx;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (layers.frame) {
    ctx.drawImage(layers.frame, 0, 0, canvas.width, canvas.height);
  }
  if (layers.mask) {
    ctx.save();
    ctx.globalAlpha = layers.overlayOpacity;
    ctx.drawImage(tintedMask(layers.mask), 0, 0, canvas.width, canvas.height);
    ctx.restore();
  }
  const sx = layers.frame ? canvas.width / layers.frame.width : 1;
  const sy = layers.frame ? canvas.height / layers.frame.height : 1;
  for (const [u, v] of layers.prompts) {
    drawMarker(ctx, u * sx, v * sy);
  }
}

function tintedMask(mask: ImageBitmap): HTMLCanvasElement {
  const off = document.createElement('canvas');
  off.width = mask.width;
  off.height = mask.height;
  const ctx = off.getContext('2d')!;
  ctx.drawImage(mask, 0, 0);
  const image = ctx.getImageData(0, 0, off.width, off.height);
  const px = image.data;
  for (let i = 0; i < px.length; i += 4) {
    const on = px[i] >= 128;
    px[i] = TINT[0];
    px[i + 1] = TINT[1];
    px[i + 2] = TINT[2];
    px[i + 3] = on ? 255 : 0;
  }
  ctx.putImageData(image, 0, 0);
  return off;
}

function drawMarker(ctx: CanvasRenderingContext2D, x: number, y: number): void {
  ctx.save();
  ctx.strokeStyle = '#ffffff';
  ctx.fillStyle = '#19c37d';
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.arc(x, y, 4, 0, 2 * Math.PI);
  ctx.fill();
  ctx.stroke();
  ctx.restore();
}
