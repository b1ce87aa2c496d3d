/** Pixel-buffer digests matching the generation service's checksum protocol.
 *
 * The service hashes `"{h}x{w}:" + raw pixel bytes` (`"{h}x{w}x3:"` for RGB)
 * with SHA-256.  Computing the same digest client-side proves a mask or image
 * survived PNG transport bit-for-bit without ever comparing encodings, so any
 * spec-conforming PNG encoder on either end is acceptable.
 */

import { asciiBytes, concatBytes } from "./bytes.js";

/** sha256 hex over a dimension header plus raw pixel bytes. */
export async function pixelChecksum(
  dims: readonly number[],
  pixels: Uint8Array,
): Promise<string> {
  const expected = dims.reduce((a, b) => a * b, 1);
  if (pixels.length !== expected) {
    throw new Error(`pixel buffer has ${pixels.length} bytes, dims ${dims.join("x")} need ${expected}`);
  }
  const header = asciiBytes(dims.join("x") + ":");
  const digest = await crypto.subtle.digest("SHA-256", concatBytes([header, pixels]));
  return [...new Uint8Array(digest)].map((b) => b.toString(16).padStart(2, "0")).join("");
}

/** Digest of an (H, W) grayscale mask buffer. */
export function grayChecksum(width: number, height: number, pixels: Uint8Array): Promise<string> {
  return pixelChecksum([height, width], pixels);
}

/** Digest of an (H, W, 3) interleaved RGB buffer. */
export function rgbChecksum(width: number, height: number, pixels: Uint8Array): Promise<string> {
  return pixelChecksum([height, width, 3], pixels);
}
