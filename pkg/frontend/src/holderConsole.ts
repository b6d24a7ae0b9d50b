// Holder console: resume editing, credential acquisition, and the live
// request inbox. All trust decisions happen in the backends; this class
// only reflects their answers and surfaces their error codes verbatim.

import { ApiError, BackendUnreachableError, WalletApi } from "./api.js";
import { subscribeConsole, type ConsoleSubscription } from "./events.js";
import { framePayloadJson } from "./frames.js";
import type { CredentialView, Position, RequestFrame, ResumeView, StoredRequest } from "./types.js";

export interface InboxItem {
  frame: RequestFrame;
  status: "pending" | "answered" | "declined";
  arrivedLive: boolean;
}

export interface HolderState {
  holderDid: string | null;
  resumes: ResumeView[];
  credentials: CredentialView[];
  inbox: InboxItem[];
  banner: string | null;
  lastError: string | null;
  realtimeConnected: boolean;
}

export class HolderConsole {
  readonly state: HolderState = {
    holderDid: null,
    resumes: [],
    credentials: [],
    inbox: [],
    banner: null,
    lastError: null,
    realtimeConnected: false,
  };

  private listeners: Array<(state: HolderState) => void> = [];
  private subscription: ConsoleSubscription | null = null;

  constructor(private readonly api: WalletApi) {}

  onChange(listener: (state: HolderState) => void): void {
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

  async load(): Promise<void> {
    try {
      const [identity, resumes, credentials, requests] = await Promise.all([
        this.api.identity(),
        this.api.resumes(),
        this.api.credentials(),
        this.api.requests(),
      ]);
      this.state.holderDid = identity.holderDid;
      this.state.resumes = resumes;
      this.state.credentials = credentials;
      this.state.inbox = requests.map((stored: StoredRequest) => ({
        frame: stored.frame,
        status: stored.status,
        arrivedLive: false,
      }));
      this.state.banner = null;
      this.emit();
    } catch (error) {
      this.fail(error);
    }
  }

  // Mirrors the backend's invalid-position rule so the form can flag the
  // problem inline before a round trip; the backend remains authoritative.
  validatePosition(position: Position): string | null {
    if (position.end && position.end < position.start) {
      return "invalid-position";
    }
    return null;
  }

  async createResume(fullName: string): Promise<ResumeView> {
    try {
      const resume = await this.api.createResume(fullName);
      this.state.resumes.push(resume);
      this.emit();
      return resume;
    } catch (error) {
      this.fail(error);
    }
  }

  async addPosition(resumeId: string, position: Position): Promise<ResumeView> {
    const inline = this.validatePosition(position);
    if (inline !== null) {
      this.state.lastError = inline;
      this.emit();
      throw new ApiError(inline, "rejected by inline validation", 0);
    }
    try {
      const resume = await this.api.addPosition(resumeId, position);
      this.state.resumes = this.state.resumes.map((r) => (r.resumeId === resumeId ? resume : r));
      this.state.lastError = null;
      this.emit();
      return resume;
    } catch (error) {
      this.fail(error);
    }
  }

  async acquire(issuerUrl: string, resumeId: string): Promise<void> {
    try {
      await this.api.acquire(issuerUrl, resumeId);
      this.state.credentials = await this.api.credentials();
      this.state.lastError = null;
      this.emit();
    } catch (error) {
      this.fail(error);
    }
  }

  connectRealtime(): void {
    this.subscription = subscribeConsole(
      this.api.consoleEventsUrl(),
      (frame) => {
        if (frame.frameType !== "request") return;
        const payload = framePayloadJson(frame) as RequestFrame;
        if (this.state.inbox.some((item) => item.frame.requestId === payload.requestId)) return;
        this.state.inbox.push({ frame: payload, status: "pending", arrivedLive: true });
        this.emit();
      },
      (connected) => {
        this.state.realtimeConnected = connected;
        this.emit();
      },
    );
  }

  async approve(requestId: string): Promise<void> {
    try {
      await this.api.approve(requestId);
      this.setStatus(requestId, "answered");
      this.state.lastError = null;
      this.emit();
    } catch (error) {
      this.fail(error);
    }
  }

  async decline(requestId: string): Promise<void> {
    try {
      await this.api.decline(requestId);
      this.setStatus(requestId, "declined");
      this.emit();
    } catch (error) {
      this.fail(error);
    }
  }

  private setStatus(requestId: string, status: InboxItem["status"]): void {
    for (const item of this.state.inbox) {
      if (item.frame.requestId === requestId) item.status = status;
    }
  }

  close(): void {
    this.subscription?.close();
    this.subscription = null;
  }
}
