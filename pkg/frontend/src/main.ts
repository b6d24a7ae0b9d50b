// Browser entry. Backend URLs come from the query string (?wallet=...&
// verifier=...&issuer=...) or localStorage, so the same static page can
// point at any running stack.

import { WalletApi, VerifierApi } from "./api.js";
import { HolderConsole } from "./holderConsole.js";
import { VerifierConsole, checksView } from "./verifierConsole.js";
import { renderHolderPage, renderChecks, renderReportSummary, renderBanner, renderErrorCode } from "./dom.js";

function configured(name: string, fallback: string): string {
  const fromQuery = new URLSearchParams(window.location.search).get(name);
  if (fromQuery) {
    window.localStorage.setItem(`rescred.${name}`, fromQuery);
    return fromQuery;
  }
  return window.localStorage.getItem(`rescred.${name}`) ?? fallback;
}

function mountHolder(root: HTMLElement, holder: HolderConsole, issuerUrl: string): void {
  const render = () => {
    root.innerHTML = renderHolderPage(holder.state);
  };
  holder.onChange(render);

  root.addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest("button[data-action]");
    if (!button) return;
    const row = button.closest("[data-request-id]");
    if (!row) return;
    const requestId = row.getAttribute("data-request-id")!;
    const action = button.getAttribute("data-action");
    void (action === "approve" ? holder.approve(requestId) : holder.decline(requestId)).catch(() => {});
  });

  const form = document.getElementById("position-form") as HTMLFormElement | null;
  form?.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const resumeId = holder.state.resumes[0]?.resumeId;
    if (!resumeId) return;
    void holder
      .addPosition(resumeId, {
        kind: (data.get("kind") as "work" | "education" | "certificate") ?? "work",
        title: String(data.get("title") ?? ""),
        organization: String(data.get("organization") ?? ""),
        start: String(data.get("start") ?? ""),
        end: data.get("end") ? String(data.get("end")) : null,
        description: String(data.get("description") ?? ""),
      })
      .catch(() => {});
  });

  document.getElementById("acquire-button")?.addEventListener("click", () => {
    const resumeId = holder.state.resumes[0]?.resumeId;
    if (resumeId) void holder.acquire(issuerUrl, resumeId).catch(() => {});
  });

  void holder.load().then(() => holder.connectRealtime());
}

function mountVerifier(root: HTMLElement, verifier: VerifierConsole): void {
  const render = () => {
    const rows = verifier.state.requests
      .map((row) => {
        const report = verifier.state.reports[row.frame.requestId];
        const detail = report ? renderReportSummary(report) + renderChecks(checksView(report)) : "";
        return `
          <article class="request-card">
            <div class="request-line">
              <span class="did">${row.frame.requestId.slice(0, 12)}</span>
              <span class="state">${verifier.requestState(row)}</span>
            </div>
            ${detail}
          </article>`;
      })
      .join("");
    root.innerHTML =
      renderBanner(verifier.state.banner) + renderErrorCode(verifier.state.lastError) + rows;
  };
  verifier.onChange(render);

  const form = document.getElementById("request-form") as HTMLFormElement | null;
  form?.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    void verifier
      .createRequest(String(data.get("credentialType") ?? "ResumeCredential"), String(data.get("holderDid") ?? ""))
      .catch(() => {});
  });

  verifier.connectRealtime();
  render();
}

const walletUrl = configured("wallet", "http://127.0.0.1:7004");
const verifierUrl = configured("verifier", "http://127.0.0.1:7003");
const issuerUrl = configured("issuer", "http://127.0.0.1:7002");

const holderRoot = document.getElementById("holder-console");
if (holderRoot) {
  mountHolder(holderRoot, new HolderConsole(new WalletApi(walletUrl)), issuerUrl);
}
const verifierRoot = document.getElementById("verifier-console");
if (verifierRoot) {
  mountVerifier(verifierRoot, new VerifierConsole(new VerifierApi(verifierUrl)));
}
