// Console event stream: server-sent events whose data lines carry the
// base64url of exact channel frame bytes. Works on browser and node fetch
// streams alike, so the tests exercise the same decoder the page runs.

import { b64urlDecode, frameFromBytes, type ChannelFrame } from "./frames.js";

export interface ConsoleSubscription {
  close(): void;
  done: Promise<void>;
}

export function subscribeConsole(
  url: string,
  onFrame: (frame: ChannelFrame) => void,
  onStatus?: (connected: boolean) => void,
): ConsoleSubscription {
  const controller = new AbortController();

  const done = (async () => {
    let response: Response;
    try {
      response = await fetch(url, { signal: controller.signal, headers: { accept: "text/event-stream" } });
    } catch {
      onStatus?.(false);
      return;
    }
    if (!response.ok || response.body === null) {
      onStatus?.(false);
      return;
    }
    onStatus?.(true);
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done: finished, value } = await reader.read();
        if (finished) break;
        buffer += decoder.decode(value, { stream: true });
        let split;
        while ((split = buffer.indexOf("\n\n")) >= 0) {
          const event = buffer.slice(0, split);
          buffer = buffer.slice(split + 2);
          for (const line of event.split("\n")) {
            if (!line.startsWith("data: ")) continue; // comments are keepalives
            try {
              onFrame(frameFromBytes(b64urlDecode(line.slice("data: ".length).trim())));
            } catch {
              // a malformed event must not kill the stream
            }
          }
        }
      }
    } catch {
      // aborted or connection dropped
    } finally {
      onStatus?.(false);
    }
  })();

  return { close: () => controller.abort(), done };
}
