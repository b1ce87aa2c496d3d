/** Region-mask painting at native image resolution.
 *
 * The mask is an (H, W) buffer of 0/255 bytes — the server counts any non-zero
 * pixel as in-region — and is painted at exactly the generator's resolution so
 * the uploaded PNG needs no resampling and round-trips bit-for-bit.  All
 * operations return fresh buffers; editor history can hold references safely.
 */

import { grayChecksum } from "./checksum.js";
import { encodeGrayPng } from "./png.js";

export interface MaskBuffer {
  width: number;
  height: number;
  /** Row-major, one byte per pixel, each 0 or 255. */
  data: Uint8Array;
}

export interface Stroke {
  kind: "brush" | "erase";
  /** Polyline in pixel coordinates; a single point stamps one dab. */
  points: ReadonlyArray<{ x: number; y: number }>;
  /** Dab radius in pixels; a dab covers dx^2 + dy^2 <= radius^2. */
  radius: number;
}

export function emptyMask(width: number, height: number): MaskBuffer {
  return { width, height, data: new Uint8Array(width * height) };
}

export function fullMask(width: number, height: number): MaskBuffer {
  return { width, height, data: new Uint8Array(width * height).fill(255) };
}

export function isEmptyMask(mask: MaskBuffer): boolean {
  return mask.data.every((v) => v === 0);
}

export function clonedMask(mask: MaskBuffer): MaskBuffer {
  return { width: mask.width, height: mask.height, data: mask.data.slice() };
}

function stampDab(mask: MaskBuffer, cx: number, cy: number, radius: number, value: number): void {
  const r = Math.max(0, Math.floor(radius));
  const x0 = Math.max(0, Math.ceil(cx - r));
  const x1 = Math.min(mask.width - 1, Math.floor(cx + r));
  const y0 = Math.max(0, Math.ceil(cy - r));
  const y1 = Math.min(mask.height - 1, Math.floor(cy + r));
  const r2 = r * r;
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) mask.data[y * mask.width + x] = value;
    }
  }
}

/** Apply one brush/erase stroke; dabs are stamped at unit steps along each segment. */
export function applyStroke(mask: MaskBuffer, stroke: Stroke): MaskBuffer {
  const out = clonedMask(mask);
  const value = stroke.kind === "brush" ? 255 : 0;
  const points = stroke.points;
  if (points.length === 0) return out;
  stampDab(out, points[0].x, points[0].y, stroke.radius, value);
  for (let i = 1; i < points.length; i++) {
    const from = points[i - 1];
    const to = points[i];
    const steps = Math.max(1, Math.ceil(Math.hypot(to.x - from.x, to.y - from.y)));
    for (let s = 1; s <= steps; s++) {
      const t = s / steps;
      stampDab(out, from.x + (to.x - from.x) * t, from.y + (to.y - from.y) * t, stroke.radius, value);
    }
  }
  return out;
}

/** Digest matching the server's region checksum for this mask. */
export function maskChecksum(mask: MaskBuffer): Promise<string> {
  return grayChecksum(mask.width, mask.height, mask.data);
}

/** Single-channel PNG bytes ready for upload. */
export function maskToPng(mask: MaskBuffer): Promise<Uint8Array> {
  return encodeGrayPng(mask.width, mask.height, mask.data);
}
