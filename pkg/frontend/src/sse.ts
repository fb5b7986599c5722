/**
 * Server-sent event consumer over fetch streaming.
 *
 * EventSource cannot carry an Authorization header, so the stream is read
 * through fetch. Disconnects trigger an automatic reconnect and surface a gap
 * marker to the caller.
 */

import type { Sample } from "./types.js";

export interface StreamHandlers {
  onSample: (sample: Sample) => void;
  /** Called when the connection drops before a reconnect attempt. */
  onGap?: () => void;
  onError?: (err: unknown) => void;
}

export interface StreamHandle {
  close: () => void;
}

export function parseSseChunk(buffer: string): { events: string[]; rest: string } {
  const events: string[] = [];
  let rest = buffer;
  for (;;) {
    const index = rest.indexOf("\n\n");
    if (index < 0) break;
    const block = rest.slice(0, index);
    rest = rest.slice(index + 2);
    for (const line of block.split("\n")) {
      if (line.startsWith("data: ")) events.push(line.slice(6));
    }
  }
  return { events, rest };
}

export function openSampleStream(
  url: string,
  token: string,
  handlers: StreamHandlers,
  reconnectDelayMs = 1000,
): StreamHandle {
  let closed = false;
  let controller = new AbortController();

  const connect = async (): Promise<void> => {
    while (!closed) {
      controller = new AbortController();
      try {
        const response = await fetch(url, {
          headers: { Authorization: `Bearer ${token}` },
          signal: controller.signal,
        });
        if (!response.ok || response.body === null) {
          throw new Error(`stream request failed with status ${response.status}`);
        }
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          buffer += decoder.decode(value, { stream: true });
          const { events, rest } = parseSseChunk(buffer);
          buffer = rest;
          for (const raw of events) {
            handlers.onSample(JSON.parse(raw) as Sample);
          }
        }
      } catch (err) {
        if (closed) return;
        handlers.onError?.(err);
      }
      if (closed) return;
      handlers.onGap?.();
      await new Promise((resolve) => setTimeout(resolve, reconnectDelayMs));
    }
  };

  void connect();
  return {
    close: () => {
      closed = true;
      controller.abort();
    },
  };
}
