/** Editing session: glues editor state to the service client.
 *
 * Responsibilities beyond plain state transitions:
 *  - every box/keyword change re-requests the server-rendered mask preview, so
 *    what the user sees is always the mask generation would actually use;
 *  - one job in flight at a time, with results recorded verbatim (the UI never
 *    synthesizes or retouches pixels — every displayed image is a job result);
 *  - mask uploads are verified by checksum so a transport bug surfaces as an
 *    error instead of silently inpainting the wrong region.
 */

import {
  type JobTicket,
  type LayoutResponse,
  StudioClient,
} from "./api.js";
import { b64ToBytes, bytesToB64 } from "./bytes.js";
import { grayChecksum, rgbChecksum } from "./checksum.js";
import {
  applyStroke,
  isEmptyMask,
  type MaskBuffer,
  maskChecksum,
  maskToPng,
  type Stroke,
} from "./mask.js";
import { decodePng } from "./png.js";
import {
  currentMask,
  deserializeState,
  type EditorState,
  freshState,
  type KeywordBox,
  moveBox,
  promoteResult,
  redo,
  resizeBox,
  serializeState,
  setBoxes,
  setKeyword,
  setMask,
  setPrompt,
  setResult,
  setSeed,
  setSourceImage,
  undo,
} from "./state.js";

export class JobInFlightError extends Error {}
export class EmptyMaskError extends Error {}
export class NoSourceImageError extends Error {}
export class MaskTransportError extends Error {}

export interface MaskPreview {
  width: number;
  height: number;
  /** Decoded grayscale pixels of the server-rendered glyph mask. */
  pixels: Uint8Array;
  /** Server digest; verified against the decoded pixels on receipt. */
  checksum: string;
}

export interface SubmitOptions {
  steps?: number;
  guidanceScale?: number;
}

function boxQuads(boxes: readonly KeywordBox[]): number[][] {
  return boxes.map((b) => [b.x0, b.y0, b.x1, b.y1]);
}

function keywordList(boxes: readonly KeywordBox[]): string[] {
  return boxes.map((b) => b.word);
}

export class StudioSession {
  state: EditorState;
  preview: MaskPreview | null = null;
  /** Set while a generate/inpaint job is queued or running. */
  activeJobId: string | null = null;
  /** Last failure message, for inline display next to the submit controls. */
  lastError: string | null = null;

  constructor(
    private readonly client: StudioClient,
    imageSize = 64,
  ) {
    this.state = freshState(imageSize);
  }

  // -- Layout editing ------------------------------------------------------------

  /** Ask Stage 1 for a layout and load it as editable boxes. */
  async fetchLayout(prompt: string): Promise<MaskPreview> {
    const response = await this.guard(() => this.client.layout({ prompt }));
    this.state = freshState(response.image_size);
    this.state = setPrompt(this.state, prompt);
    const boxes = response.boxes.map(([x0, y0, x1, y1], i) => ({
      x0,
      y0,
      x1,
      y1,
      word: response.keywords[i] ?? "",
    }));
    this.state = setBoxes(this.state, boxes);
    // Loading a layout is one action, not three separate undo steps.
    this.state = { ...this.state, undoStack: [], redoStack: [] };
    return this.acceptPreview(response);
  }

  /** Re-render the mask preview for the current boxes and keywords. */
  async refreshPreview(): Promise<MaskPreview> {
    const { boxes } = this.state.current;
    const response = await this.guard(() =>
      this.client.layout({ boxes: boxQuads(boxes), keywords: keywordList(boxes) }),
    );
    return this.acceptPreview(response);
  }

  private async acceptPreview(response: LayoutResponse): Promise<MaskPreview> {
    const decoded = await decodePng(b64ToBytes(response.mask_png_b64));
    if (decoded.channels !== 1) {
      throw new MaskTransportError("mask preview is not a single-channel image");
    }
    const local = await grayChecksum(decoded.width, decoded.height, decoded.pixels);
    if (local !== response.mask_checksum) {
      throw new MaskTransportError(
        `decoded mask digest ${local} != server ${response.mask_checksum}`,
      );
    }
    this.preview = {
      width: decoded.width,
      height: decoded.height,
      pixels: decoded.pixels,
      checksum: response.mask_checksum,
    };
    return this.preview;
  }

  async dragBox(index: number, dx: number, dy: number): Promise<MaskPreview> {
    this.state = moveBox(this.state, index, dx, dy);
    return this.refreshPreview();
  }

  async resizeBoxEdges(
    index: number,
    patch: Partial<Pick<KeywordBox, "x0" | "y0" | "x1" | "y1">>,
  ): Promise<MaskPreview> {
    this.state = resizeBox(this.state, index, patch);
    return this.refreshPreview();
  }

  /** Edit a keyword's text; the preview re-render is part of the contract. */
  async editKeyword(index: number, word: string): Promise<MaskPreview> {
    this.state = setKeyword(this.state, index, word);
    return this.refreshPreview();
  }

  // -- Mask painting -------------------------------------------------------------

  paintStroke(stroke: Stroke): void {
    this.state = setMask(this.state, applyStroke(currentMask(this.state), stroke));
  }

  mask(): MaskBuffer {
    return currentMask(this.state);
  }

  canSubmitInpaint(): boolean {
    return this.inpaintBlockReason() === null;
  }

  /** Human-readable reason inpainting is blocked, or null when submittable. */
  inpaintBlockReason(): string | null {
    if (this.state.current.sourcePngB64 === null) return "load or generate a source image first";
    if (isEmptyMask(currentMask(this.state))) return "paint the region to edit first";
    if (this.activeJobId !== null) return "a job is already running";
    return null;
  }

  // -- Jobs ----------------------------------------------------------------------

  /** Generate from the edited layout; resolves once the result is displayed. */
  async submitGenerate(opts: SubmitOptions = {}): Promise<JobTicket> {
    const { prompt, boxes, seed } = this.state.current;
    return this.runJob(() =>
      this.client.submitGenerate({
        prompt,
        boxes: boxes.length > 0 ? boxQuads(boxes) : undefined,
        keywords: boxes.length > 0 ? keywordList(boxes) : undefined,
        seed,
        steps: opts.steps,
        guidance_scale: opts.guidanceScale,
      }),
    );
  }

  /**
   * Inpaint the painted region of the source image.  Returns the ticket, whose
   * `region_checksum` has already been verified against the local mask bytes.
   */
  async submitInpaint(text: string | null, opts: SubmitOptions = {}): Promise<JobTicket> {
    if (this.state.current.sourcePngB64 === null) {
      throw new NoSourceImageError("load or generate a source image first");
    }
    const mask = currentMask(this.state);
    if (isEmptyMask(mask)) {
      throw new EmptyMaskError("paint the region to edit first");
    }
    const localChecksum = await maskChecksum(mask);
    const regionB64 = bytesToB64(await maskToPng(mask));
    const ticket = await this.runJob(() =>
      this.client.submitInpaint({
        image_png_b64: this.state.current.sourcePngB64 as string,
        region_png_b64: regionB64,
        text: text ?? undefined,
        seed: this.state.current.seed,
        steps: opts.steps,
        guidance_scale: opts.guidanceScale,
      }),
    );
    if (ticket.region_checksum !== localChecksum) {
      throw new MaskTransportError(
        `server decoded region digest ${ticket.region_checksum} != local ${localChecksum}`,
      );
    }
    return ticket;
  }

  private async runJob(submit: () => Promise<JobTicket>): Promise<JobTicket> {
    if (this.activeJobId !== null) {
      throw new JobInFlightError(`job ${this.activeJobId} is still running`);
    }
    this.lastError = null;
    let ticket: JobTicket;
    try {
      ticket = await submit();
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    }
    this.activeJobId = ticket.job_id;
    try {
      await this.client.awaitJob(ticket.job_id);
      const result = await this.client.result(ticket.job_id);
      await this.verifyResult(result.image_png_b64, result.image_checksum);
      this.state = setResult(this.state, {
        jobId: result.job_id,
        pngB64: result.image_png_b64,
        checksum: result.image_checksum,
      });
      return ticket;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    } finally {
      this.activeJobId = null;
    }
  }

  private async verifyResult(pngB64: string, expected: string): Promise<void> {
    const decoded = await decodePng(b64ToBytes(pngB64));
    const digest =
      decoded.channels === 1
        ? await grayChecksum(decoded.width, decoded.height, decoded.pixels)
        : await rgbChecksum(decoded.width, decoded.height, decoded.pixels);
    if (digest !== expected) {
      throw new MaskTransportError(`result digest ${digest} != server ${expected}`);
    }
  }

  /** Make the last result the source image for the next inpainting round. */
  promote(): void {
    this.state = promoteResult(this.state);
  }

  loadSourceImage(pngB64: string): void {
    this.state = setSourceImage(this.state, pngB64);
  }

  setSeed(seed: number): void {
    this.state = setSeed(this.state, seed);
  }

  setPrompt(prompt: string): void {
    this.state = setPrompt(this.state, prompt);
  }

  undo(): void {
    this.state = undo(this.state);
  }

  redo(): void {
    this.state = redo(this.state);
  }

  save(): string {
    return serializeState(this.state);
  }

  load(text: string): void {
    this.state = deserializeState(text);
    this.preview = null;
  }

  private async guard<T>(call: () => Promise<T>): Promise<T> {
    try {
      const value = await call();
      this.lastError = null;
      return value;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    }
  }
}
