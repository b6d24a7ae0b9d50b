// Fetch clients for the wallet and verifier backends. Backend errors carry
// {code, message}; the code is surfaced verbatim to the UI. A transport
// failure (service down) is a distinct condition the consoles show as a
// banner rather than an error code.

import type { CredentialView, Report, RequestFrame, ResumeView, StoredRequest, Position } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

export class BackendUnreachableError extends Error {
  constructor(public readonly url: string) {
    super(`backend unreachable: ${url}`);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(base + path, {
      ...init,
      headers: { "content-type": "application/json", ...(init?.headers ?? {}) },
    });
  } catch {
    throw new BackendUnreachableError(base);
  }
  const body: unknown = await response.json().catch(() => null);
  if (!response.ok) {
    const record = (body ?? {}) as { code?: string; message?: string };
    throw new ApiError(record.code ?? `http-${response.status}`, record.message ?? "", response.status);
  }
  return body as T;
}

export class WalletApi {
  constructor(public readonly baseUrl: string) {}

  identity(): Promise<{ holderDid: string }> {
    return request(this.baseUrl, "/wallet");
  }

  resumes(): Promise<ResumeView[]> {
    return request(this.baseUrl, "/resumes");
  }

  createResume(fullName: string): Promise<ResumeView> {
    return request(this.baseUrl, "/resumes", { method: "POST", body: JSON.stringify({ fullName }) });
  }

  addPosition(resumeId: string, position: Position): Promise<ResumeView> {
    return request(this.baseUrl, `/resumes/${resumeId}/positions`, {
      method: "POST",
      body: JSON.stringify(position),
    });
  }

  credentials(): Promise<CredentialView[]> {
    return request(this.baseUrl, "/credentials");
  }

  acquire(issuerUrl: string, resumeId: string): Promise<{ id: string; issuer: string; token: string }> {
    return request(this.baseUrl, "/acquire", { method: "POST", body: JSON.stringify({ issuerUrl, resumeId }) });
  }

  requests(): Promise<StoredRequest[]> {
    return request(this.baseUrl, "/requests");
  }

  approve(requestId: string): Promise<{ requestId: string; status: string }> {
    return request(this.baseUrl, `/requests/${requestId}/approve`, { method: "POST" });
  }

  decline(requestId: string): Promise<{ requestId: string; status: string }> {
    return request(this.baseUrl, `/requests/${requestId}/decline`, { method: "POST" });
  }

  consoleEventsUrl(): string {
    return this.baseUrl + "/console/events";
  }
}

export class VerifierApi {
  constructor(public readonly baseUrl: string) {}

  createRequest(credentialType: string, holderDid?: string): Promise<RequestFrame> {
    const body: Record<string, string> = { credentialType };
    if (holderDid) body["holderDid"] = holderDid;
    return request(this.baseUrl, "/requests", { method: "POST", body: JSON.stringify(body) });
  }

  getRequest(requestId: string): Promise<RequestFrame> {
    return request(this.baseUrl, `/requests/${requestId}`);
  }

  getReport(requestId: string): Promise<Report> {
    return request(this.baseUrl, `/reports/${requestId}`);
  }

  consoleEventsUrl(): string {
    return this.baseUrl + "/console/events";
  }
}
