// Rendering: store view -> HTML strings. Kept free of DOM state so the
// markup is testable without a browser; main.ts owns element wiring.

import { Rating, RoundView, SlateItem } from "./api.js";
import { StoreView } from "./store.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function itemLabel(item: SlateItem): string {
  const artists = item.artists.length ? ` - ${item.artists.join(", ")}` : "";
  const label = escapeHtml(`${item.title}${artists}`);
  if (item.link) {
    return `${label} <a href="${escapeHtml(item.link)}" target="_blank" rel="noopener">listen</a>`;
  }
  return label;
}

export function renderTranscript(rounds: RoundView[]): string {
  if (!rounds.length) return '<p class="empty">No queries yet.</p>';
  const parts = rounds.map((round, i) => {
    const items = round.items
      .map((item) => {
        const rating = round.ratings?.[item.item_id];
        const mark = rating === "like" ? "+" : rating === "dislike" ? "-" : "?";
        return `<li data-rated="${rating ?? ""}"><span class="mark">${mark}</span> ${itemLabel(item)}</li>`;
      })
      .join("");
    return `
      <section class="round">
        <h3>Query ${i + 1}: ${escapeHtml(round.utterance)}</h3>
        <ul class="rated-items">${items}</ul>
      </section>`;
  });
  return parts.join("\n");
}

export function renderCurrentSlate(
  slate: SlateItem[] | null,
  pending: Record<string, Rating>,
): string {
  if (!slate) return "";
  const rows = slate
    .map((item) => {
      const current = pending[item.item_id];
      const likeOn = current === "like" ? " selected" : "";
      const dislikeOn = current === "dislike" ? " selected" : "";
      return `
        <li class="slate-item" data-item="${escapeHtml(item.item_id)}">
          ${itemLabel(item)}
          <span class="controls">
            <button class="rate like${likeOn}" data-item="${escapeHtml(item.item_id)}" data-rating="like">like</button>
            <button class="rate dislike${dislikeOn}" data-item="${escapeHtml(item.item_id)}" data-rating="dislike">dislike</button>
          </span>
        </li>`;
    })
    .join("");
  return `<ul class="slate">${rows}</ul>`;
}

export function renderControls(view: StoreView): string {
  const progress = `${view.completedRounds}/${view.minRounds} rounds`;
  return `
    <form id="query-form">
      <input id="query-input" type="text" placeholder="Describe what you want to hear"
             ${view.canSendQuery ? "" : "disabled"} />
      <button id="send-query" type="submit" ${view.canSendQuery ? "" : "disabled"}>Send</button>
    </form>
    <button id="submit-ratings" ${view.canSubmitRatings ? "" : "disabled"}>Submit ratings</button>
    <button id="finish-session" ${view.canFinish ? "" : "disabled"}>Finish session</button>
    <span class="progress">${progress}</span>`;
}

export function renderReport(view: StoreView): string {
  if (!view.report) return "";
  const rates = Object.entries(view.report.hit_rates)
    .map(([name, rate]) => `<li>${escapeHtml(name)}: ${(rate * 100).toFixed(1)}%</li>`)
    .join("");
  return `
    <section class="report">
      <h2>Session report</h2>
      <p>${view.report.included_rounds} rounds included,
         ${view.report.excluded_rounds} excluded.</p>
      <ul>${rates}</ul>
      <a id="report-link" href="#${escapeHtml(view.sessionId ?? "")}/report">permalink</a>
    </section>`;
}

export function renderError(view: StoreView): string {
  if (!view.error) return "";
  return `
    <div class="error" role="alert">
      ${escapeHtml(view.error)}
      <button id="dismiss-error">retry</button>
    </div>`;
}

export function renderApp(view: StoreView): string {
  if (view.phase === "idle") {
    return `
      ${renderError(view)}
      <p class="instructions">${escapeHtml(view.instructions)}</p>
      <button id="start-session">Start session</button>`;
  }
  return `
    ${renderError(view)}
    <p class="instructions">${escapeHtml(view.instructions)}</p>
    <div id="transcript">${renderTranscript(view.transcript)}</div>
    <div id="current-slate">${renderCurrentSlate(view.currentSlate, view.pendingRatings)}</div>
    <div id="controls">${renderControls(view)}</div>
    ${renderReport(view)}`;
}
