/** Typed client for the generation service's HTTP endpoints.
 *
 * Layout previews come back synchronously; generate and inpaint return a job
 * ticket that must be polled.  `awaitJob` polls with exponential backoff so an
 * idle tab doesn't hammer the server while a long sample runs.  All responses
 * are validated with zod before use so protocol drift fails loudly here rather
 * than deep inside the editor.
 */

import { z } from "zod";

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export class JobFailedError extends Error {
  constructor(
    readonly jobId: string,
    message: string,
  ) {
    super(message);
  }
}

export class JobTimeoutError extends Error {}

const layoutResponse = z.object({
  keywords: z.array(z.string()),
  boxes: z.array(z.tuple([z.number(), z.number(), z.number(), z.number()])),
  image_size: z.number().int().positive(),
  mask_png_b64: z.string(),
  mask_checksum: z.string(),
});
export type LayoutResponse = z.infer<typeof layoutResponse>;

const jobTicket = z.object({
  job_id: z.string(),
  status: z.string(),
  kind: z.string().optional(),
  region_checksum: z.string().optional(),
});
export type JobTicket = z.infer<typeof jobTicket>;

const jobStatus = z.object({
  id: z.string(),
  kind: z.string(),
  status: z.enum(["queued", "running", "done", "failed"]),
  error: z.string().nullable(),
  enqueued_at: z.number(),
  started_at: z.number().nullable(),
  finished_at: z.number().nullable(),
});
export type JobStatus = z.infer<typeof jobStatus>;

const jobResult = z.object({
  job_id: z.string(),
  kind: z.string(),
  image_png_b64: z.string(),
  image_checksum: z.string(),
});
export type JobResult = z.infer<typeof jobResult>;

export interface LayoutRequest {
  prompt?: string;
  boxes?: number[][];
  keywords?: string[];
}

export interface GenerateRequest {
  prompt: string;
  boxes?: number[][];
  keywords?: string[];
  mask_png_b64?: string;
  seed?: number;
  steps?: number;
  guidance_scale?: number;
}

export interface InpaintRequest {
  image_png_b64: string;
  region_png_b64: string;
  text?: string;
  boxes?: number[][];
  seed?: number;
  steps?: number;
  guidance_scale?: number;
}

export interface PollOptions {
  initialDelayMs?: number;
  maxDelayMs?: number;
  backoffFactor?: number;
  timeoutMs?: number;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;
type SleepLike = (ms: number) => Promise<void>;

const realSleep: SleepLike = (ms) => new Promise((resolve) => setTimeout(resolve, ms));

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let code = "http_error";
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = (await response.json()) as { detail?: { code?: string; message?: string } };
    if (body.detail?.code) code = body.detail.code;
    if (body.detail?.message) message = body.detail.message;
  } catch {
    // non-JSON error body; keep the HTTP status line
  }
  throw new ServiceError(response.status, code, message);
}

export class StudioClient {
  private readonly fetchImpl: FetchLike;
  private readonly sleep: SleepLike;

  constructor(
    readonly baseUrl: string,
    opts: { fetchImpl?: FetchLike; sleep?: SleepLike } = {},
  ) {
    this.fetchImpl = opts.fetchImpl ?? ((url, init) => fetch(url, init));
    this.sleep = opts.sleep ?? realSleep;
  }

  private async postJson(path: string, body: unknown): Promise<unknown> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    await raiseForStatus(response);
    return response.json();
  }

  private async getJson(path: string): Promise<unknown> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    await raiseForStatus(response);
    return response.json();
  }

  async layout(request: LayoutRequest): Promise<LayoutResponse> {
    return layoutResponse.parse(await this.postJson("/v1/layout", request));
  }

  async submitGenerate(request: GenerateRequest): Promise<JobTicket> {
    return jobTicket.parse(await this.postJson("/v1/generate", request));
  }

  async submitInpaint(request: InpaintRequest): Promise<JobTicket> {
    return jobTicket.parse(await this.postJson("/v1/inpaint", request));
  }

  async jobStatus(jobId: string): Promise<JobStatus> {
    return jobStatus.parse(await this.getJson(`/v1/jobs/${jobId}`));
  }

  async result(jobId: string): Promise<JobResult> {
    return jobResult.parse(await this.getJson(`/v1/results/${jobId}`));
  }

  /** Poll until the job leaves the queue; resolves on done, throws on failure. */
  async awaitJob(jobId: string, opts: PollOptions = {}): Promise<JobStatus> {
    const initial = opts.initialDelayMs ?? 150;
    const max = opts.maxDelayMs ?? 2000;
    const factor = opts.backoffFactor ?? 1.6;
    const timeout = opts.timeoutMs ?? 180_000;
    let delay = initial;
    let waited = 0;
    for (;;) {
      const status = await this.jobStatus(jobId);
      if (status.status === "done") return status;
      if (status.status === "failed") {
        throw new JobFailedError(jobId, status.error ?? "job failed");
      }
      if (waited >= timeout) {
        throw new JobTimeoutError(`job ${jobId} still ${status.status} after ${waited} ms`);
      }
      await this.sleep(delay);
      waited += delay;
      delay = Math.min(delay * factor, max);
    }
  }
}
