// Verifier console: issue presentation requests and watch reports arrive.
// The report view renders the backend's eleven checks exactly as reported:
// pass, fail, or not-run (short-circuited).

import { ApiError, BackendUnreachableError, VerifierApi } from "./api.js";
import { subscribeConsole, type ConsoleSubscription } from "./events.js";
import { framePayloadJson } from "./frames.js";
import type { Report, RequestFrame } from "./types.js";

export interface RequestRow {
  frame: RequestFrame;
  createdAt: number;
  acked: boolean;
}

export type CheckState = "pass" | "fail" | "not-run";

export interface CheckRow {
  name: string;
  state: CheckState;
  detail: string;
}

export interface VerifierState {
  requests: RequestRow[];
  reports: Record<string, Report>;
  banner: string | null;
  lastError: string | null;
  realtimeConnected: boolean;
}

export function checksView(report: Report): CheckRow[] {
  return report.checks.map((check) => ({
    name: check.name,
    state: check.passed ? "pass" : check.detail === "not-run" ? "not-run" : "fail",
    detail: check.detail,
  }));
}

export class VerifierConsole {
  readonly state: VerifierState = {
    requests: [],
    reports: {},
    banner: null,
    lastError: null,
    realtimeConnected: false,
  };

  private listeners: Array<(state: VerifierState) => void> = [];
  private subscription: ConsoleSubscription | null = null;

  constructor(private readonly api: VerifierApi) {}

  onChange(listener: (state: VerifierState) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  private fail(error: unknown): never {
    if (error instanceof BackendUnreachableError) {
      this.state.banner = "backend-unreachable";
    } else if (error instanceof ApiError) {
      this.state.lastError = error.code;
    } else {
      this.state.lastError = String(error);
    }
    this.emit();
    throw error;
  }

  async createRequest(credentialType: string, holderDid?: string): Promise<RequestFrame> {
    try {
      const frame = await this.api.createRequest(credentialType, holderDid);
      this.state.requests.push({ frame, createdAt: Date.now(), acked: false });
      this.state.lastError = null;
      this.emit();
      return frame;
    } catch (error) {
      this.fail(error);
    }
  }

  // Table state for one request, derived only from backend facts.
  requestState(row: RequestRow, nowSeconds = Math.floor(Date.now() / 1000)): string {
    const report = this.state.reports[row.frame.requestId];
    if (report) return report.outcome;
    if (nowSeconds > row.frame.expiresAt) return "request-expired";
    return row.acked ? "delivered" : "pending";
  }

  connectRealtime(): void {
    this.subscription = subscribeConsole(
      this.api.consoleEventsUrl(),
      (frame) => {
        const payload = framePayloadJson(frame) as Record<string, unknown>;
        if (frame.frameType === "response" && typeof payload["outcome"] === "string") {
          const report = payload as unknown as Report;
          this.state.reports[report.requestId] = report;
          this.emit();
        } else if (frame.frameType === "ack" && typeof payload["requestId"] === "string") {
          for (const row of this.state.requests) {
            if (row.frame.requestId === payload["requestId"]) row.acked = true;
          }
          this.emit();
        }
      },
      (connected) => {
        this.state.realtimeConnected = connected;
        this.emit();
      },
    );
  }

  async loadReport(requestId: string): Promise<Report> {
    try {
      const report = await this.api.getReport(requestId);
      this.state.reports[requestId] = report;
      this.emit();
      return report;
    } catch (error) {
      this.fail(error);
    }
  }

  close(): void {
    this.subscription?.close();
    this.subscription = null;
  }
}
