// HTML rendering. Pure string templates over console state so they can be
// asserted without a browser; main.ts wires them to the document.

import type { HolderState, InboxItem } from "./holderConsole.js";
import type { CheckRow } from "./verifierConsole.js";
import type { CredentialView, Report, ResumeView } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderBanner(banner: string | null): string {
  if (!banner) return "";
  return `<div class="banner error" role="alert">${escapeHtml(banner)}</div>`;
}

export function renderErrorCode(code: string | null): string {
  if (!code) return "";
  return `<div class="error-code" role="status">${escapeHtml(code)}</div>`;
}

export function renderResume(resume: ResumeView): string {
  const rows = resume.positions
    .map(
      (p) => `
      <li class="position ${p.kind}">
        <strong>${escapeHtml(p.title)}</strong> at ${escapeHtml(p.organization)}
        <span class="dates">${escapeHtml(p.start)}${p.end ? " to " + escapeHtml(p.end) : ""}</span>
      </li>`,
    )
    .join("");
  return `
    <section class="resume" data-resume-id="${escapeHtml(resume.resumeId)}">
      <h3>${escapeHtml(resume.fullName)}</h3>
      <ul>${rows}</ul>
    </section>`;
}

export function renderCredentials(credentials: CredentialView[]): string {
  if (credentials.length === 0) return `<p class="empty">No credentials yet.</p>`;
  const rows = credentials
    .map(
      (c) => `
      <tr class="${c.status}">
        <td>${escapeHtml(c.type)}</td>
        <td class="did">${escapeHtml(c.issuer)}</td>
        <td>${new Date(c.expiresAt * 1000).toISOString().slice(0, 10)}</td>
        <td class="status">${c.status}</td>
      </tr>`,
    )
    .join("");
  return `<table class="credentials"><thead><tr><th>Type</th><th>Issuer</th><th>Expires</th><th>Status</th></tr></thead><tbody>${rows}</tbody></table>`;
}

export function renderInbox(inbox: InboxItem[]): string {
  if (inbox.length === 0) return `<p class="empty">No presentation requests.</p>`;
  const rows = inbox
    .map(
      (item) => `
      <tr class="inbox-row ${item.status}" data-request-id="${escapeHtml(item.frame.requestId)}">
        <td class="did">${escapeHtml(item.frame.verifierDid)}</td>
        <td>${escapeHtml(item.frame.credentialType)}</td>
        <td class="status">${item.status}</td>
        <td>
          <button data-action="approve" ${item.status !== "pending" ? "disabled" : ""}>Approve</button>
          <button data-action="decline" ${item.status !== "pending" ? "disabled" : ""}>Decline</button>
        </td>
      </tr>`,
    )
    .join("");
  return `<table class="inbox"><thead><tr><th>Verifier</th><th>Type</th><th>Status</th><th></th></tr></thead><tbody>${rows}</tbody></table>`;
}

export function renderChecks(checks: CheckRow[]): string {
  const rows = checks
    .map(
      (check) => `
      <li class="check ${check.state}">
        <span class="name">${escapeHtml(check.name)}</span>
        <span class="state">${check.state}</span>
        <span class="detail">${escapeHtml(check.detail)}</span>
      </li>`,
    )
    .join("");
  return `<ol class="checks">${rows}</ol>`;
}

export function renderReportSummary(report: Report): string {
  const resume = report.presentedResume
    ? `<div class="presented"><h4>${escapeHtml(report.presentedResume.fullName)}</h4><p>${report.presentedResume.positions.length} positions</p></div>`
    : "";
  return `
    <header class="report ${report.outcome}">
      <h3>${escapeHtml(report.requestId)}</h3>
      <span class="outcome">${report.outcome}</span>
      ${report.failedCheck ? `<span class="failed-check">${escapeHtml(report.failedCheck)}</span>` : ""}
    </header>
    ${resume}`;
}

export function renderHolderPage(state: HolderState): string {
  return `
    ${renderBanner(state.banner)}
    ${renderErrorCode(state.lastError)}
    <div class="identity did">${state.holderDid ? escapeHtml(state.holderDid) : "loading"}</div>
    <div class="realtime ${state.realtimeConnected ? "on" : "off"}">realtime ${state.realtimeConnected ? "connected" : "offline"}</div>
    ${state.resumes.map(renderResume).join("")}
    <h2>Credentials</h2>
    ${renderCredentials(state.credentials)}
    <h2>Requests</h2>
    ${renderInbox(state.inbox)}`;
}
