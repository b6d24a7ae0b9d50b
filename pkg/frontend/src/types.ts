// Wire shapes of the wallet and verifier backends. The UI renders these
// verbatim; it never derives trust facts of its own.

export interface Position {
  kind: "education" | "work" | "certificate";
  title: string;
  organization: string;
  start: string;
  end?: string | null;
  description?: string;
  organizationDid?: string;
}

export interface ResumeView {
  resumeId: string;
  holderDid: string;
  fullName: string;
  positions: Position[];
}

export interface CredentialView {
  id: string;
  type: string;
  issuer: string;
  subject: string;
  issuedAt: number;
  expiresAt: number;
  status: "valid" | "expired";
  token: string;
}

export interface RequestFrame {
  requestId: string;
  verifierDid: string;
  credentialType: string;
  nonce: string;
  responseKey: string;
  expiresAt: number;
}

export interface StoredRequest {
  frame: RequestFrame;
  receivedAt: number;
  status: "pending" | "answered" | "declined";
}

export interface CheckResult {
  name: string;
  passed: boolean;
  detail: string;
}

export interface Report {
  requestId: string;
  outcome: "accepted" | "rejected";
  checks: CheckResult[];
  verifiedAt: number;
  failedCheck: string | null;
  presentedResume: { holderDid: string; fullName: string; positions: Position[] } | null;
}

export const CHECK_NAMES = [
  "envelope-decryption",
  "presentation-structure",
  "nonce-binding",
  "audience-binding",
  "holder-signature",
  "holder-binding",
  "credential-structure",
  "issuer-resolution",
  "issuer-signature",
  "issuer-trusted",
  "validity-window",
] as const;
