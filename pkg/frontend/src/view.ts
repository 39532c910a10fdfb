// View model for the chat client: transcript, source panel, token entry.
//
// Pure state transitions with no DOM dependency so the contract is testable
// against recorded service responses; app.ts does the rendering.

import { AuthError, RetriableError } from "./api.js";
import type { ChatResponse, SourceRef, StreamHead } from "./types.js";

export const FALLBACK_NOTICE = "no course material matched";
export const RETRY_NOTICE = "service temporarily unavailable, try again";
export const AUTH_NOTICE = "access token rejected, enter a new one";

export type Turn = {
  question: string;
  answer: string;
  sources: SourceRef[];
  fallback: boolean;
  pending: boolean;
  notice: string | null;
};

export type ChatApi = {
  chat(botId: string, message: string, conversationId: string): Promise<ChatResponse>;
  chatStream(
    botId: string,
    message: string,
    conversationId: string,
    handlers: { onHead?: (head: StreamHead) => void; onFragment?: (text: string) => void },
  ): Promise<{ head: StreamHead; text: string }>;
};

export type ApiFactory = (token: string) => ChatApi;

export class ChatView {
  state: "token-entry" | "ready" = "token-entry";
  turns: Turn[] = [];
  botId: string;
  conversationId: string;
  onChange: (() => void) | null = null;

  private api: ChatApi | null = null;
  private inFlight = false;
  private convCounter = 0;
  private readonly makeApi: ApiFactory;

  constructor(makeApi: ApiFactory, botId: string) {
    this.makeApi = makeApi;
    this.botId = botId;
    this.conversationId = this.nextConversationId();
  }

  private nextConversationId(): string {
    this.convCounter += 1;
    return `conv-${this.convCounter}-${Math.random().toString(36).slice(2, 8)}`;
  }

  private notify(): void {
    this.onChange?.();
  }

  signIn(token: string): void {
    this.api = this.makeApi(token);
    this.state = "ready";
    this.notify();
  }

  get canSend(): boolean {
    return this.state === "ready" && !this.inFlight;
  }

  // One in-flight message per conversation; returns false when refused.
  async send(message: string, opts: { stream?: boolean } = {}): Promise<boolean> {
    if (!this.canSend || this.api === null || message.trim() === "") return false;
    this.inFlight = true;
    const turn: Turn = {
      question: message,
      answer: "",
      sources: [],
      fallback: false,
      pending: true,
      notice: null,
    };
    this.turns.push(turn);
    this.notify();
    try {
      if (opts.stream) {
        await this.api.chatStream(this.botId, message, this.conversationId, {
          onHead: (head) => {
            turn.sources = head.sources;
            turn.fallback = head.fallback;
            if (head.fallback) turn.notice = FALLBACK_NOTICE;
            this.notify();
          },
          onFragment: (text) => {
            turn.answer += text;
            this.notify();
          },
        });
      } else {
        const resp = await this.api.chat(this.botId, message, this.conversationId);
        turn.answer = resp.reply;
        turn.sources = resp.sources;
        turn.fallback = resp.fallback;
        if (resp.fallback) turn.notice = FALLBACK_NOTICE;
      }
    } catch (err) {
      if (err instanceof AuthError) {
        turn.notice = AUTH_NOTICE;
        this.api = null;
        this.state = "token-entry";
      } else if (err instanceof RetriableError) {
        turn.notice =
          err.retryAfterSeconds !== null
            ? `${RETRY_NOTICE} (in ${err.retryAfterSeconds}s)`
            : RETRY_NOTICE;
      } else {
        throw err;
      }
    } finally {
      turn.pending = false;
      this.inFlight = false;
      this.notify();
    }
    return true;
  }

  // Switching course starts a fresh conversation and clears visible history.
  switchCourse(botId: string): void {
    this.botId = botId;
    this.conversationId = this.nextConversationId();
    this.turns = [];
    this.notify();
  }

  // The source panel shows only what the service returned for the last turn.
  currentSources(): SourceRef[] {
    const last = this.turns[this.turns.length - 1];
    return last ? last.sources : [];
  }

  renderTranscript(): string[] {
    const lines: string[] = [];
    for (const turn of this.turns) {
      lines.push(`you: ${turn.question}`);
      lines.push(`bot: ${turn.pending && turn.answer === "" ? "…" : turn.answer}`);
      for (const src of turn.sources) {
        lines.push(
          `  [${src.title} #${src.seq}] chars ${src.char_start}-${src.char_end}: ${src.excerpt}`,
        );
      }
      if (turn.notice) lines.push(`  note: ${turn.notice}`);
    }
    return lines;
  }
}
