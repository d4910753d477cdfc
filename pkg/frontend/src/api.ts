// Typed client for the confirmation service HTTP API. Every mutating call
// is captured in a network log so a session can be replayed verbatim
// against a fresh server (the UI holds no state the API cannot rebuild).

export interface SessionInfo {
  id: string;
  phase: "searching" | "awaiting_confirmations" | "between_iterations" | "finished";
  iteration: number;
  lexicon_size: number;
  pending_count: number;
  decided_count: number;
}

export interface PendingHit {
  hit_id: string;
  form: string;
  utterance_id: string;
  start: number;
  end: number;
  score: number;
  status?: string;
  exemplar_id?: string;
}

export interface Clip {
  samples: Float32Array;
  rate: number;
  /** highlight span in seconds, relative to the clip start */
  highlight: [number, number];
  /** object URL suitable for an <audio> element */
  url: string;
}

export type Decision = "confirm" | "reject";

export interface LogEntry {
  method: string;
  path: string;
  body: unknown | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseError(resp: Response): Promise<ApiError> {
  let code = "error";
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body && typeof body === "object") {
      code = body.error ?? code;
      detail = body.detail ?? detail;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, code, detail);
}

export class Client {
  readonly log: LogEntry[] = [];

  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.base + path);
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  private async post<T>(path: string, body: unknown | null): Promise<T> {
    this.log.push({ method: "POST", path, body });
    const resp = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: body === null ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  session(): Promise<SessionInfo> {
    return this.get("/api/session");
  }

  pending(limit?: number, group = true): Promise<PendingHit[]> {
    const params = new URLSearchParams();
    if (limit !== undefined) params.set("limit", String(limit));
    if (group) params.set("group", "true");
    const qs = params.toString();
    return this.get(`/api/hits/pending${qs ? "?" + qs : ""}`);
  }

  decide(hitId: string, decision: Decision): Promise<PendingHit> {
    return this.post(`/api/hits/${encodeURIComponent(hitId)}/decision`, { decision });
  }

  advance(): Promise<SessionInfo> {
    return this.post("/api/iteration/advance", null);
  }

  report(): Promise<Record<string, unknown>> {
    return this.get("/api/report");
  }

  queryClipPath(exemplarId: string): string {
    return `/api/clips/query/${encodeURIComponent(exemplarId)}`;
  }

  hitClipPath(hitId: string, context = 0.5): string {
    return `/api/clips/hit/${encodeURIComponent(hitId)}?context=${context}`;
  }

  async fetchClip(path: string): Promise<Clip> {
    const resp = await this.fetchFn(this.base + path);
    if (!resp.ok) throw await parseError(resp);
    const bytes = new Uint8Array(await resp.arrayBuffer());
    const { samples, rate } = decodeWav(bytes);
    const highlight: [number, number] = [
      parseFloat(resp.headers.get("X-Highlight-Start") ?? "0"),
      parseFloat(resp.headers.get("X-Highlight-End") ?? String(samples.length / rate)),
    ];
    const url = URL.createObjectURL(new Blob([bytes.buffer as ArrayBuffer], { type: "audio/wav" }));
    return { samples, rate, highlight, url };
  }

  /** Replay this client's captured network log against another client.
   * Requests the server rejected in the original run are rejected again on
   * replay; those responses are part of the faithful re-run, so ApiErrors
   * are not surfaced here. */
  async replayLog(target: Client): Promise<void> {
    for (const entry of this.log) {
      try {
        await target.post(entry.path, entry.body);
      } catch (err) {
        if (!(err instanceof ApiError)) throw err;
      }
    }
  }
}

/** Minimal mono WAV decoder: 16-bit integer or 32-bit float PCM. */
export function decodeWav(bytes: Uint8Array): { samples: Float32Array; rate: number } {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const tag = (off: number) => String.fromCharCode(...bytes.subarray(off, off + 4));
  if (tag(0) !== "RIFF" || tag(8) !== "WAVE") throw new Error("not a WAV file");
  let offset = 12;
  let format = 0;
  let bits = 0;
  let rate = 0;
  let samples: Float32Array | null = null;
  while (offset + 8 <= bytes.byteLength) {
    const id = tag(offset);
    const size = view.getUint32(offset + 4, true);
    const body = offset + 8;
    if (id === "fmt ") {
      format = view.getUint16(body, true);
      rate = view.getUint32(body + 4, true);
      bits = view.getUint16(body + 14, true);
    } else if (id === "data") {
      if (format === 1 && bits === 16) {
        const n = size / 2;
        samples = new Float32Array(n);
        for (let i = 0; i < n; i++) samples[i] = view.getInt16(body + 2 * i, true) / 32768;
      } else if (format === 3 && bits === 32) {
        const n = size / 4;
        samples = new Float32Array(n);
        for (let i = 0; i < n; i++) samples[i] = view.getFloat32(body + 4 * i, true);
      } else {
        throw new Error(`unsupported WAV format ${format}/${bits}`);
      }
    }
    offset = body + size + (size & 1);
  }
  if (!samples || !rate) throw new Error("malformed WAV file");
  return { samples, rate };
}

/** Peak amplitudes (0..1) for a simple bar-strip rendering. */
export function amplitudeStrip(samples: Float32Array, bars: number): number[] {
  if (samples.length === 0) return new Array(bars).fill(0);
  const out: number[] = [];
  for (let b = 0; b < bars; b++) {
    const lo = Math.floor((b * samples.length) / bars);
    const hi = Math.max(lo + 1, Math.floor(((b + 1) * samples.length) / bars));
    let peak = 0;
    for (let i = lo; i < hi; i++) peak = Math.max(peak, Math.abs(samples[i] ?? 0));
    out.push(Math.min(1, peak));
  }
  return out;
}
