// Incremental server-sent-events parser.
//
// The service emits events separated by blank lines; a block is an optional
// "event: <name>" line followed by one or more "data: <payload>" lines.
// feed() may be called with arbitrary chunk boundaries (mid-line, mid-block);
// completed events are returned as they close.

export type SseEvent = {
  event: string | null;
  data: string;
};

export class SseParser {
  private buffer = "";

  feed(chunk: string): SseEvent[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const events: SseEvent[] = [];
    let split: number;
    while ((split = this.buffer.indexOf("\n\n")) !== -1) {
      const block = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const parsed = parseBlock(block);
      if (parsed) events.push(parsed);
    }
    return events;
  }

  // Flush a trailing block that was not terminated by a blank line.
  end(): SseEvent[] {
    const rest = this.buffer;
    this.buffer = "";
    const parsed = parseBlock(rest);
    return parsed ? [parsed] : [];
  }
}

function parseBlock(block: string): SseEvent | null {
  let event: string | null = null;
  const data: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith(":") || line === "") continue;
    if (line.startsWith("event:")) {
      event = line.slice("event:".length).trimStart();
    } else if (line.startsWith("data:")) {
      data.push(line.slice("data:".length).trimStart());
    }
  }
  if (event === null && data.length === 0) return null;
  return { event, data: data.join("\n") };
}

export function parseSseText(text: string): SseEvent[] {
  const parser = new SseParser();
  return [...parser.feed(text), ...parser.end()];
}
