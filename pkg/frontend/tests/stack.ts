// Spawns the Python backend stack for end-to-end console tests.

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { fileURLToPath } from "node:url";
import path from "node:path";
import readline from "node:readline";

export interface StackInfo {
  walletUrl: string;
  verifierUrl: string;
  issuerUrl: string;
  registryUrl: string;
  holderDid: string;
  issuerDid: string;
  verifierDid: string;
}

export class BackendStack {
  private constructor(
    private readonly child: ChildProcessWithoutNullStreams,
    private readonly lines: AsyncIterableIterator<string>,
    public readonly info: StackInfo,
  ) {}

  static async start(): Promise<BackendStack> {
    const harness = path.join(path.dirname(fileURLToPath(import.meta.url)), "harness.py");
    const child = spawn("python3", [harness], { stdio: ["pipe", "pipe", "pipe"] });
    child.stderr.on("data", (chunk: Buffer) => {
      process.stderr.write(`[stack] ${chunk}`);
    });
    const reader = readline.createInterface({ input: child.stdout });
    const lines = reader[Symbol.asyncIterator]();
    const first = await Promise.race([
      lines.next(),
      new Promise<never>((_, reject) => setTimeout(() => reject(new Error("stack startup timed out")), 30000)),
    ]);
    if (first.done) throw new Error("stack exited before announcing itself");
    return new BackendStack(child, lines, JSON.parse(first.value) as StackInfo);
  }

  async command(name: string): Promise<void> {
    this.child.stdin.write(name + "\n");
    const reply = await this.lines.next();
    if (reply.done) throw new Error("stack closed mid-command");
    const parsed = JSON.parse(reply.value) as { ok: boolean; error?: string };
    if (!parsed.ok) throw new Error(parsed.error ?? "command failed");
  }

  stop(): void {
    this.child.stdin.end();
    this.child.kill("SIGTERM");
  }
}

export async function until<T>(fn: () => T | Promise<T>, predicate: (v: T) => boolean, timeoutMs = 15000): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  let last: T;
  for (;;) {
    last = await fn();
    if (predicate(last)) return last;
    if (Date.now() > deadline) throw new Error(`condition not met within ${timeoutMs}ms`);
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
}
