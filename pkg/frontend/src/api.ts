// Typed client for the courserag chat endpoints.
//
// Only the HTTP+JSON surface is used; the fetch implementation is injectable
// so tests can replay recorded responses.

import { SseParser } from "./sse.js";
import type { ApiErrorBody, ChatResponse, StreamHead } from "./types.js";

export class AuthError extends Error {}

export class RetriableError extends Error {
  readonly retryAfterSeconds: number | null;

  constructor(message: string, retryAfterSeconds: number | null = null) {
    super(message);
    this.retryAfterSeconds = retryAfterSeconds;
  }
}

export class ApiError extends Error {
  readonly status: number;

  constructor(message: string, status: number) {
    super(message);
    this.status = status;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type StreamHandlers = {
  onHead?: (head: StreamHead) => void;
  onFragment?: (text: string) => void;
};

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let detail = `http ${resp.status}`;
  try {
    const body = (await resp.json()) as ApiErrorBody;
    if (body.detail) {
      // framework validation errors carry structured detail, not a string
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  if (resp.status === 401) throw new AuthError(detail);
  if (resp.status === 502 || resp.status === 503 || resp.status === 504) {
    const after = resp.headers.get("retry-after");
    const seconds = after !== null && after !== "" ? Number(after) : null;
    throw new RetriableError(detail, Number.isFinite(seconds as number) ? seconds : null);
  }
  throw new ApiError(detail, resp.status);
}

export class CourseRagClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private chatUrl(botId: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}/bots/${encodeURIComponent(botId)}/chat`;
  }

  private async post(botId: string, payload: Record<string, unknown>): Promise<Response> {
    return this.fetchImpl(this.chatUrl(botId), {
      method: "POST",
      headers: {
        "Content-Type": "application/json",
        Authorization: `Bearer ${this.token}`,
      },
      body: JSON.stringify(payload),
    });
  }

  async chat(botId: string, message: string, conversationId: string): Promise<ChatResponse> {
    const resp = await this.post(botId, {
      message,
      conversation_id: conversationId,
    });
    await raiseForStatus(resp);
    return (await resp.json()) as ChatResponse;
  }

  async chatStream(
    botId: string,
    message: string,
    conversationId: string,
    handlers: StreamHandlers = {},
  ): Promise<{ head: StreamHead; text: string }> {
    const resp = await this.post(botId, {
      message,
      conversation_id: conversationId,
      stream: true,
    });
    await raiseForStatus(resp);

    const parser = new SseParser();
    let head: StreamHead | null = null;
    let text = "";
    let finished = false;

    const handle = (event: string | null, data: string): void => {
      if (event === "sources") {
        head = JSON.parse(data) as StreamHead;
        handlers.onHead?.(head);
      } else if (event === "done") {
        finished = true;
      } else if (event === "error") {
        const body = JSON.parse(data) as { error: string; retriable?: boolean };
        if (body.retriable) throw new RetriableError(body.error);
        throw new ApiError(body.error, 0);
      } else if (event === null) {
        const fragment = (JSON.parse(data) as { text: string }).text;
        text += fragment;
        handlers.onFragment?.(fragment);
      }
    };

    if (resp.body) {
      const reader = resp.body.getReader();
      const decoder = new TextDecoder();
      for (;;) {
        const { value, done } = await reader.read();
        if (done) break;
        for (const ev of parser.feed(decoder.decode(value, { stream: true }))) {
          handle(ev.event, ev.data);
        }
      }
    } else {
      for (const ev of parser.feed(await resp.text())) handle(ev.event, ev.data);
    }
    for (const ev of parser.end()) handle(ev.event, ev.data);

    if (head === null) throw new RetriableError("stream carried no sources event");
    if (!finished) throw new RetriableError("stream ended before completion");
    return { head, text };
  }
}
