/** Editor document: prompt, keyword boxes, painted mask, result, and history.
 *
 * Snapshots are plain JSON-serializable data and every edit returns a new
 * state, so undo/redo is a pair of snapshot stacks and save/load is plain
 * JSON.  Job results are recorded in place without a history entry: undo
 * covers user edits, and un-receiving a finished job would desync the display
 * from the server's job store.
 */

import { z } from "zod";

import { b64ToBytes, bytesToB64 } from "./bytes.js";
import type { MaskBuffer } from "./mask.js";

export interface KeywordBox {
  /** Normalized corners, 0 <= x0 < x1 <= 1 and likewise for y. */
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  /** Keyword rendered inside the box. */
  word: string;
}

export interface ResultImage {
  jobId: string;
  /** PNG bytes exactly as the server returned them, base64. */
  pngB64: string;
  /** Server-computed digest of the decoded pixels. */
  checksum: string;
}

export interface Snapshot {
  prompt: string;
  imageSize: number;
  boxes: KeywordBox[];
  mask: { width: number; height: number; dataB64: string };
  seed: number;
  /** PNG bytes of the image inpainting draws on, base64; null until one is loaded. */
  sourcePngB64: string | null;
  result: ResultImage | null;
}

export interface EditorState {
  current: Snapshot;
  undoStack: Snapshot[];
  redoStack: Snapshot[];
}

const boxSchema = z.object({
  x0: z.number().min(0).max(1),
  y0: z.number().min(0).max(1),
  x1: z.number().min(0).max(1),
  y1: z.number().min(0).max(1),
  word: z.string(),
});

const snapshotSchema = z.object({
  prompt: z.string(),
  imageSize: z.number().int().positive(),
  boxes: z.array(boxSchema),
  mask: z.object({
    width: z.number().int().positive(),
    height: z.number().int().positive(),
    dataB64: z.string(),
  }),
  seed: z.number().int(),
  sourcePngB64: z.string().nullable(),
  result: z
    .object({ jobId: z.string(), pngB64: z.string(), checksum: z.string() })
    .nullable(),
});

const stateSchema = z.object({
  version: z.literal(1),
  current: snapshotSchema,
  undoStack: z.array(snapshotSchema),
  redoStack: z.array(snapshotSchema),
});

export class StateLoadError extends Error {}

// -- Construction -------------------------------------------------------------------

export function freshState(imageSize: number): EditorState {
  return {
    current: {
      prompt: "",
      imageSize,
      boxes: [],
      mask: {
        width: imageSize,
        height: imageSize,
        dataB64: bytesToB64(new Uint8Array(imageSize * imageSize)),
      },
      seed: 0,
      sourcePngB64: null,
      result: null,
    },
    undoStack: [],
    redoStack: [],
  };
}

/** Smallest normalized box span: one pixel at canvas resolution. */
export function minSpan(state: EditorState): number {
  return 1 / state.current.imageSize;
}

// -- History ---------------------------------------------------------------------------

function commit(state: EditorState, next: Snapshot): EditorState {
  return {
    current: next,
    undoStack: [...state.undoStack, state.current],
    redoStack: [],
  };
}

export function undo(state: EditorState): EditorState {
  if (state.undoStack.length === 0) return state;
  const previous = state.undoStack[state.undoStack.length - 1];
  return {
    current: previous,
    undoStack: state.undoStack.slice(0, -1),
    redoStack: [...state.redoStack, state.current],
  };
}

export function redo(state: EditorState): EditorState {
  if (state.redoStack.length === 0) return state;
  const next = state.redoStack[state.redoStack.length - 1];
  return {
    current: next,
    undoStack: [...state.undoStack, state.current],
    redoStack: state.redoStack.slice(0, -1),
  };
}

// -- Box editing -------------------------------------------------------------------------

const clamp01 = (v: number) => Math.min(1, Math.max(0, v));

function clampBox(box: KeywordBox, span: number): KeywordBox {
  let x0 = clamp01(Math.min(box.x0, box.x1));
  let x1 = clamp01(Math.max(box.x0, box.x1));
  let y0 = clamp01(Math.min(box.y0, box.y1));
  let y1 = clamp01(Math.max(box.y0, box.y1));
  if (x1 - x0 < span) {
    if (x0 + span <= 1) x1 = x0 + span;
    else [x0, x1] = [1 - span, 1];
  }
  if (y1 - y0 < span) {
    if (y0 + span <= 1) y1 = y0 + span;
    else [y0, y1] = [1 - span, 1];
  }
  return { ...box, x0, y0, x1, y1 };
}

function withBox(state: EditorState, index: number, box: KeywordBox): EditorState {
  const boxes = state.current.boxes.slice();
  boxes[index] = box;
  return commit(state, { ...state.current, boxes });
}

function boxAt(state: EditorState, index: number): KeywordBox {
  const box = state.current.boxes[index];
  if (box === undefined) throw new RangeError(`no box at index ${index}`);
  return box;
}

/** Replace all boxes (e.g. from a fresh layout prediction). */
export function setBoxes(state: EditorState, boxes: readonly KeywordBox[]): EditorState {
  const span = minSpan(state);
  return commit(state, { ...state.current, boxes: boxes.map((b) => clampBox(b, span)) });
}

/** Translate a box, clamping the delta so the box stays fully on canvas. */
export function moveBox(state: EditorState, index: number, dx: number, dy: number): EditorState {
  const box = boxAt(state, index);
  const fx = Math.min(1 - box.x1, Math.max(-box.x0, dx));
  const fy = Math.min(1 - box.y1, Math.max(-box.y0, dy));
  return withBox(state, index, {
    ...box,
    x0: box.x0 + fx,
    x1: box.x1 + fx,
    y0: box.y0 + fy,
    y1: box.y1 + fy,
  });
}

/** Patch individual corners; result is clamped to the canvas and minimum span. */
export function resizeBox(
  state: EditorState,
  index: number,
  patch: Partial<Pick<KeywordBox, "x0" | "y0" | "x1" | "y1">>,
): EditorState {
  const box = boxAt(state, index);
  return withBox(state, index, clampBox({ ...box, ...patch }, minSpan(state)));
}

export function setKeyword(state: EditorState, index: number, word: string): EditorState {
  return withBox(state, index, { ...boxAt(state, index), word });
}

// -- Prompt / seed / mask / results ----------------------------------------------------------

export function setPrompt(state: EditorState, prompt: string): EditorState {
  return commit(state, { ...state.current, prompt });
}

export function setSeed(state: EditorState, seed: number): EditorState {
  return commit(state, { ...state.current, seed });
}

export function currentMask(state: EditorState): MaskBuffer {
  const { width, height, dataB64 } = state.current.mask;
  return { width, height, data: b64ToBytes(dataB64) };
}

export function setMask(state: EditorState, mask: MaskBuffer): EditorState {
  return commit(state, {
    ...state.current,
    mask: { width: mask.width, height: mask.height, dataB64: bytesToB64(mask.data) },
  });
}

/** Record a finished job's image verbatim; no history entry (see module doc). */
export function setResult(state: EditorState, result: ResultImage): EditorState {
  return { ...state, current: { ...state.current, result } };
}

/** Make the last result the image the next inpainting round draws on. */
export function promoteResult(state: EditorState): EditorState {
  const result = state.current.result;
  if (result === null) throw new Error("no result to promote");
  return commit(state, { ...state.current, sourcePngB64: result.pngB64 });
}

export function setSourceImage(state: EditorState, pngB64: string): EditorState {
  return commit(state, { ...state.current, sourcePngB64: pngB64 });
}

// -- Persistence ---------------------------------------------------------------------------

export function serializeState(state: EditorState): string {
  return JSON.stringify({ version: 1, ...state });
}

export function deserializeState(text: string): EditorState {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new StateLoadError(`not valid JSON: ${String(err)}`);
  }
  const parsed = stateSchema.safeParse(raw);
  if (!parsed.success) {
    throw new StateLoadError(`not a saved editor state: ${parsed.error.message}`);
  }
  const { current, undoStack, redoStack } = parsed.data;
  return { current, undoStack, redoStack };
}
