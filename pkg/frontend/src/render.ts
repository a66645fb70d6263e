// Pure rendering helpers: data in, HTML/SVG strings out. Keeping these
// free of DOM access makes them testable in a plain node runner.

import type { Architecture, ExplanationOutcome, Metrics, SaliencyView, Ticket } from "./api.js";
import type { ConsoleState } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// -- metrics chart ------------------------------------------------------------

export interface ChartGeometry {
  width: number;
  height: number;
  pad: number;
}

export const CHART: ChartGeometry = { width: 420, height: 180, pad: 28 };

export function chartPoints(
  values: number[],
  geom: ChartGeometry = CHART,
): { x: number; y: number }[] {
  const span = Math.max(values.length - 1, 1);
  const innerW = geom.width - 2 * geom.pad;
  const innerH = geom.height - 2 * geom.pad;
  return values.map((v, i) => ({
    x: geom.pad + (i / span) * innerW,
    y: geom.pad + (1 - v) * innerH,
  }));
}

function polyline(values: number[], color: string, geom: ChartGeometry): string {
  const pts = chartPoints(values, geom)
    .map((p) => `${p.x.toFixed(1)},${p.y.toFixed(1)}`)
    .join(" ");
  const dots = chartPoints(values, geom)
    .map((p) => `<circle cx="${p.x.toFixed(1)}" cy="${p.y.toFixed(1)}" r="3" fill="${color}"/>`)
    .join("");
  return `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="2"/>${dots}`;
}

export function metricsChartSvg(metrics: Metrics[], geom: ChartGeometry = CHART): string {
  const fine = metrics.map((m) => m.fine_accuracy);
  const coarse = metrics.map((m) => m.coarse_accuracy);
  const labels = metrics
    .map((m, i) => {
      const p = chartPoints(fine, geom)[i];
      return `<text x="${p.x.toFixed(1)}" y="${geom.height - 6}" text-anchor="middle" class="tick">r${m.round}</text>`;
    })
    .join("");
  return (
    `<svg viewBox="0 0 ${geom.width} ${geom.height}" class="chart" role="img">` +
    `<rect x="${geom.pad}" y="${geom.pad}" width="${geom.width - 2 * geom.pad}"` +
    ` height="${geom.height - 2 * geom.pad}" class="chart-bg"/>` +
    polyline(coarse, "#7aa2f7", geom) +
    polyline(fine, "#e0684b", geom) +
    labels +
    `<text x="${geom.pad}" y="14" class="legend"><tspan fill="#e0684b">fine</tspan>` +
    ` / <tspan fill="#7aa2f7">coarse</tspan> accuracy</text>` +
    `</svg>`
  );
}

// -- dashboard ------------------------------------------------------------------

export function phaseBadge(state: ConsoleState): string {
  const label =
    state.phase === "done"
      ? "done"
      : state.phase === "ready-to-train"
        ? "ready to train"
        : state.phase === "awaiting-explanations"
          ? "awaiting explanations"
          : state.phase || "no session";
  return `<span class="badge phase-${escapeHtml(state.phase || "none")}">${escapeHtml(label)}</span>`;
}

export function dashboardHtml(state: ConsoleState): string {
  if (!state.sessionId) return `<p class="muted">No session loaded.</p>`;
  const last = state.metrics[state.metrics.length - 1];
  const acc = last
    ? `fine ${(last.fine_accuracy * 100).toFixed(1)}% / coarse ${(last.coarse_accuracy * 100).toFixed(1)}%`
    : "n/a";
  return (
    `<div class="dash">` +
    `<div>session <code>${escapeHtml(state.sessionId)}</code> on ${escapeHtml(state.dataset)}</div>` +
    `<div>round ${state.roundsCompleted} of ${state.k} &middot; mode ${escapeHtml(state.mode)} &middot; ${phaseBadge(state)}</div>` +
    `<div>latest accuracy: ${acc} &middot; patches: ${state.patchesCreated}</div>` +
    (state.exhausted ? `<div class="warn">class pairs exhausted early</div>` : "") +
    `</div>`
  );
}

export function groupListHtml(arch: Architecture | null): string {
  if (!arch) return "";
  if (arch.groups.length === 0) {
    return `<p class="muted">flat ${arch.arity}-way classifier, no groups yet</p>`;
  }
  const rows = arch.groups
    .map(
      (g) =>
        `<li><strong>group ${g.group_id}</strong> (${g.members.length}-ary): ` +
        `${g.class_names.map(escapeHtml).join(", ")}</li>`,
    )
    .join("");
  return `<p>global arity ${arch.arity} of ${arch.num_classes} classes</p><ul>${rows}</ul>`;
}

// -- explanation entry cards --------------------------------------------------------

export function segmentChips(outcome: ExplanationOutcome | undefined): string {
  if (!outcome) return "";
  if (outcome.status === "ok") {
    const chips = (outcome.segments ?? [])
      .map((s) => `<span class="chip">${escapeHtml(s)}</span>`)
      .join(" ");
    return `<div class="chips">parsed: ${chips}</div>`;
  }
  if (outcome.status === "error") {
    return `<div class="parse-error">${escapeHtml(outcome.error ?? "no segments found")}</div>`;
  }
  return `<div class="muted">skipped</div>`;
}

export function ticketCardHtml(
  ticket: Ticket,
  outcome: ExplanationOutcome | undefined,
): string {
  return (
    `<div class="card" data-ticket="${escapeHtml(ticket.ticket_id)}">` +
    `<div class="prompt">${escapeHtml(ticket.prompt)}</div>` +
    `<div class="muted">pair distance ${ticket.jsd.toFixed(4)}</div>` +
    `<textarea rows="3" placeholder="contrastive explanation..."></textarea>` +
    segmentChips(outcome) +
    `<div class="row">` +
    `<button class="submit" data-ticket="${escapeHtml(ticket.ticket_id)}">submit</button>` +
    `<button class="skip" data-ticket="${escapeHtml(ticket.ticket_id)}">skip</button>` +
    `</div></div>`
  );
}

export function ticketsHtml(state: ConsoleState): string {
  if (!state.sessionId) return "";
  if (state.phase === "done") return `<p class="muted">session complete.</p>`;
  if (state.tickets.length === 0) {
    return `<p class="muted">all tickets resolved; advance to retrain.</p>`;
  }
  return state.tickets.map((t) => ticketCardHtml(t, state.outcomes[t.ticket_id])).join("");
}

// -- saliency inspector -----------------------------------------------------------------

export function heatColor(value: number, vmax: number): string {
  const t = vmax > 0 ? Math.min(value / vmax, 1) : 0;
  const alpha = (0.08 + 0.92 * t).toFixed(3);
  return `rgba(224, 104, 75, ${alpha})`;
}

export function saliencyTableHtml(view: SaliencyView): string {
  const vmax = Math.max(...view.grid.flat());
  const rows = view.grid
    .map(
      (row) =>
        `<tr>` +
        row
          .map(
            (v) =>
              `<td style="background:${heatColor(v, vmax)}" title="${v.toExponential(3)}"></td>`,
          )
          .join("") +
        `</tr>`,
    )
    .join("");
  return (
    `<p class="muted">sample ${view.sample_id} (true class ${view.fine_label}), ` +
    `target class ${view.class}, ${view.h}&times;${view.w} grid</p>` +
    `<table class="heat">${rows}</table>`
  );
}
