// Wire types for the courserag HTTP+JSON API.

export type SourceRef = {
  chunk_id: string;
  title: string;
  seq: number;
  char_start: number;
  char_end: number;
  excerpt: string;
};

export type Usage = {
  tokens_in: number;
  tokens_out: number;
};

export type ChatResponse = {
  reply: string;
  sources: SourceRef[];
  fallback: boolean;
  profile_id: string;
  corpus_version: number;
  usage: Usage;
};

// First SSE event of a streamed chat: everything but the reply text.
export type StreamHead = {
  sources: SourceRef[];
  fallback: boolean;
  profile_id: string;
  corpus_version: number;
};

export type ApiErrorBody = {
  error: string;
  detail: string;
};
