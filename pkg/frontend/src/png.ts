/** Minimal 8-bit grayscale / RGB PNG codec that runs unchanged in browsers and Node.
 *
 * The studio must upload region masks as true single-channel PNGs — the server
 * treats any RGB upload as a colour image — and `canvas.toBlob` can only emit
 * RGBA.  Rather than bundling a Node-oriented codec behind compatibility shims,
 * this delegates the zlib layer to the platform `CompressionStream` /
 * `DecompressionStream` APIs and implements only the PNG framing: chunk
 * structure, CRC-32, and the five scanline filters.  Checksums in the transport
 * protocol are over raw pixels, so interoperability with the server's encoder
 * is verified end-to-end by digest equality rather than byte-identical files.
 */

import { asciiBytes, concatBytes } from "./bytes.js";

const SIGNATURE = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]);
const COLOR_GRAY = 0;
const COLOR_RGB = 2;

export interface DecodedPng {
  width: number;
  height: number;
  /** 1 for grayscale, 3 for RGB. */
  channels: 1 | 3;
  /** Row-major interleaved samples, length = width * height * channels. */
  pixels: Uint8Array;
}

export class PngFormatError extends Error {}

// -- CRC-32 (polynomial 0xEDB88320, as required by the PNG spec) -------------------

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

// -- zlib via platform streams ------------------------------------------------------

async function pumpThrough(
  bytes: Uint8Array,
  stream: { writable: WritableStream<Uint8Array>; readable: ReadableStream<Uint8Array> },
): Promise<Uint8Array> {
  const writer = stream.writable.getWriter();
  const writing = (async () => {
    await writer.write(bytes);
    await writer.close();
  })();
  const drained = new Uint8Array(await new Response(stream.readable).arrayBuffer());
  await writing;
  return drained;
}

function deflate(bytes: Uint8Array): Promise<Uint8Array> {
  return pumpThrough(bytes, new CompressionStream("deflate"));
}

async function inflate(bytes: Uint8Array): Promise<Uint8Array> {
  try {
    return await pumpThrough(bytes, new DecompressionStream("deflate"));
  } catch (err) {
    throw new PngFormatError(`corrupt zlib stream: ${String(err)}`);
  }
}

// -- Chunk plumbing -----------------------------------------------------------------

function u32be(value: number): Uint8Array {
  return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff]);
}

function readU32(bytes: Uint8Array, at: number): number {
  return ((bytes[at] << 24) | (bytes[at + 1] << 16) | (bytes[at + 2] << 8) | bytes[at + 3]) >>> 0;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const body = concatBytes([asciiBytes(type), data]);
  return concatBytes([u32be(data.length), body, u32be(crc32(body))]);
}

interface RawChunk {
  type: string;
  data: Uint8Array;
}

function* chunks(bytes: Uint8Array): Generator<RawChunk> {
  let at = SIGNATURE.length;
  while (at + 8 <= bytes.length) {
    const length = readU32(bytes, at);
    const type = String.fromCharCode(...bytes.subarray(at + 4, at + 8));
    const start = at + 8;
    if (start + length + 4 > bytes.length) throw new PngFormatError(`truncated ${type} chunk`);
    const data = bytes.subarray(start, start + length);
    const stored = readU32(bytes, start + length);
    if (crc32(bytes.subarray(at + 4, start + length)) !== stored) {
      throw new PngFormatError(`bad CRC in ${type} chunk`);
    }
    yield { type, data };
    at = start + length + 4;
    if (type === "IEND") return;
  }
  throw new PngFormatError("missing IEND chunk");
}

// -- Scanline filters ----------------------------------------------------------------

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

function unfilter(raw: Uint8Array, width: number, height: number, bpp: number): Uint8Array {
  const rowBytes = width * bpp;
  if (raw.length !== height * (rowBytes + 1)) {
    throw new PngFormatError(`decompressed size ${raw.length} != ${height}x(${rowBytes}+1)`);
  }
  const out = new Uint8Array(height * rowBytes);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (rowBytes + 1)];
    const src = y * (rowBytes + 1) + 1;
    const dst = y * rowBytes;
    const prev = dst - rowBytes;
    for (let x = 0; x < rowBytes; x++) {
      const value = raw[src + x];
      const a = x >= bpp ? out[dst + x - bpp] : 0;
      const b = y > 0 ? out[prev + x] : 0;
      const c = y > 0 && x >= bpp ? out[prev + x - bpp] : 0;
      let recon: number;
      switch (filter) {
        case 0:
          recon = value;
          break;
        case 1:
          recon = value + a;
          break;
        case 2:
          recon = value + b;
          break;
        case 3:
          recon = value + ((a + b) >> 1);
          break;
        case 4:
          recon = value + paeth(a, b, c);
          break;
        default:
          throw new PngFormatError(`unknown scanline filter ${filter}`);
      }
      out[dst + x] = recon & 0xff;
    }
  }
  return out;
}

// -- Public API -----------------------------------------------------------------------

/** Decode an 8-bit non-interlaced grayscale or RGB PNG. */
export async function decodePng(bytes: Uint8Array): Promise<DecodedPng> {
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new PngFormatError("not a PNG file");
  }
  let header: { width: number; height: number; channels: 1 | 3 } | null = null;
  const idat: Uint8Array[] = [];
  for (const { type, data } of chunks(bytes)) {
    if (type === "IHDR") {
      const bitDepth = data[8];
      const colorType = data[9];
      const interlace = data[12];
      if (bitDepth !== 8) throw new PngFormatError(`unsupported bit depth ${bitDepth}`);
      if (colorType !== COLOR_GRAY && colorType !== COLOR_RGB) {
        throw new PngFormatError(`unsupported color type ${colorType}`);
      }
      if (interlace !== 0) throw new PngFormatError("interlaced PNGs are not supported");
      header = {
        width: readU32(data, 0),
        height: readU32(data, 4),
        channels: colorType === COLOR_GRAY ? 1 : 3,
      };
    } else if (type === "IDAT") {
      idat.push(data);
    }
  }
  if (header === null) throw new PngFormatError("missing IHDR chunk");
  if (idat.length === 0) throw new PngFormatError("missing IDAT chunk");
  const raw = await inflate(concatBytes(idat));
  const pixels = unfilter(raw, header.width, header.height, header.channels);
  return { ...header, pixels };
}

async function encodePng(
  width: number,
  height: number,
  pixels: Uint8Array,
  channels: 1 | 3,
): Promise<Uint8Array> {
  if (pixels.length !== width * height * channels) {
    throw new PngFormatError(`pixel buffer has ${pixels.length} bytes, expected ${width * height * channels}`);
  }
  const ihdr = concatBytes([
    u32be(width),
    u32be(height),
    new Uint8Array([8, channels === 1 ? COLOR_GRAY : COLOR_RGB, 0, 0, 0]),
  ]);
  const rowBytes = width * channels;
  const raw = new Uint8Array(height * (rowBytes + 1));
  for (let y = 0; y < height; y++) {
    raw.set(pixels.subarray(y * rowBytes, (y + 1) * rowBytes), y * (rowBytes + 1) + 1);
  }
  const idat = await deflate(raw);
  return concatBytes([SIGNATURE, chunk("IHDR", ihdr), chunk("IDAT", idat), chunk("IEND", new Uint8Array(0))]);
}

/** Encode an (H, W) grayscale buffer as a single-channel PNG. */
export function encodeGrayPng(width: number, height: number, pixels: Uint8Array): Promise<Uint8Array> {
  return encodePng(width, height, pixels, 1);
}

/** Encode an (H, W, 3) interleaved RGB buffer. */
export function encodeRgbPng(width: number, height: number, pixels: Uint8Array): Promise<Uint8Array> {
  return encodePng(width, height, pixels, 3);
}
