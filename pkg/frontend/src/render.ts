import { decodeDensity } from './rle';
import type { ViewState } from './state';

/** Inferno-ish ramp: dark blue through orange to light yellow. */
function heatColor(v: number): [number, number, number] {
  const t = v / 255;
  return [
    Math.round(255 * Math.min(1, 0.2 + 2.2 * t)),
    Math.round(255 * Math.max(0, 1.6 * t - 0.25)),
    Math.round(255 * Math.max(0, 0.55 - 1.1 * t + (t > 0.8 ? (t - 0.8) * 3 : 0))),
  ];
}

/**
 * Redraw the full overlay: density heat layer, region boundaries, per-region
 * dots, and a brightened wash over the selected region.
 */
export function renderOverlay(ctx: CanvasRenderingContext2D, view: ViewState): void {
  const { width, height } = view.state.grid;
  const canvasW = ctx.canvas.width;
  const canvasH = ctx.canvas.height;
  const sx = canvasW / width;
  const sy = canvasH / height;
  const density = decodeDensity(view.state.density_b64);
  const labels = view.labels;

  const image = ctx.createImageData(width, height);
  for (let i = 0; i < width * height; i++) {
    const [r, g, b] = heatColor(density[i]);
    const selected = labels[i] === view.selectedRegion;
    const boost = selected ? 70 : 0;
    image.data[4 * i] = Math.min(255, r + boost);
    image.data[4 * i + 1] = Math.min(255, g + boost);
    image.data[4 * i + 2] = Math.min(255, b + boost);
    image.data[4 * i + 3] = 255;
  }
  // boundary pixels: label changes toward the right or downward neighbour
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = y * width + x;
      const right = x + 1 < width && labels[i] !== labels[i + 1];
      const down = y + 1 < height && labels[i] !== labels[i + width];
      if (right || down) {
        image.data[4 * i] = 235;
        image.data[4 * i + 1] = 235;
        image.data[4 * i + 2] = 235;
      }
    }
  }

  const off = document.createElement('canvas');
  off.width = width;
  off.height = height;
  const offCtx = off.getContext('2d');
  if (!offCtx) return;
  offCtx.putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvasW, canvasH);
  ctx.drawImage(off, 0, 0, canvasW, canvasH);

  ctx.fillStyle = '#ff3b30';
  for (const region of view.state.regions) {
    for (const [dx, dy] of region.dots) {
      ctx.beginPath();
      ctx.arc((dx + 0.5) * sx, (dy + 0.5) * sy, Math.max(2, sx * 0.8), 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
