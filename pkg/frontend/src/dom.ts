// DOM rendering for the badge and the review screen. The live badge
// shows only the MES colour and class or the unsuitable/disconnected
// indicators; probabilities, logits and certainty values are never
// written into the document.

import type { BadgeState } from "./badge.js";
import type { Mes } from "./protocol.js";
import { MES_VALUES } from "./protocol.js";
import type { ReviewViewModel } from "./review.js";

export function renderBadge(root: HTMLElement, state: BadgeState): void {
  root.innerHTML = "";
  const badge = root.ownerDocument.createElement("div");
  badge.className = "badge";
  if (!state.connected) {
    badge.classList.add("badge-disconnected");
    badge.textContent = "disconnected";
  } else if (!state.visible) {
    badge.classList.add("badge-hidden");
  } else if (!state.suitable || state.mes === null) {
    badge.classList.add("badge-unsuitable");
    badge.textContent = "unsuitable view";
  } else {
    badge.classList.add(`badge-${state.colour}`);
    badge.style.backgroundColor = state.colour ?? "";
    badge.textContent = `MES ${state.mes}`;
  }
  root.appendChild(badge);
}

export interface ReviewCallbacks {
  onSubmit: (vm: ReviewViewModel) => void;
}

export function renderReview(
  root: HTMLElement,
  vm: ReviewViewModel,
  callbacks: ReviewCallbacks,
): void {
  const doc = root.ownerDocument;
  root.innerHTML = "";

  const heading = doc.createElement("h2");
  heading.className = "overall-score";
  heading.textContent =
    vm.overall === "unscorable" ? "No scorable footage" : `Overall MES ${vm.overall}`;
  root.appendChild(heading);

  const grid = doc.createElement("div");
  grid.className = "frame-grid";
  for (const card of vm.cards) {
    const cell = doc.createElement("figure");
    cell.className = "frame-card";
    cell.dataset.frame = String(card.frame);

    const img = doc.createElement("img");
    img.src = card.image;
    img.alt = `frame ${card.frame}`;
    cell.appendChild(img);

    const model = doc.createElement("figcaption");
    model.textContent = `model: MES ${card.modelMes}`;
    cell.appendChild(model);

    const scoreRow = doc.createElement("div");
    scoreRow.className = "score-buttons";
    for (const mes of MES_VALUES) {
      const button = doc.createElement("button");
      button.textContent = `MES ${mes}`;
      button.className = card.correctedMes === mes ? "selected" : "";
      button.addEventListener("click", () => {
        vm.setCorrection(card.frame, mes as Mes);
        renderReview(root, vm, callbacks);
      });
      scoreRow.appendChild(button);
    }
    cell.appendChild(scoreRow);

    const journalLabel = doc.createElement("label");
    const journalBox = doc.createElement("input");
    journalBox.type = "checkbox";
    journalBox.checked = card.inJournal;
    journalBox.addEventListener("change", () => vm.toggleJournal(card.frame));
    journalLabel.appendChild(journalBox);
    journalLabel.appendChild(doc.createTextNode(" add to journal"));
    cell.appendChild(journalLabel);

    grid.appendChild(cell);
  }
  root.appendChild(grid);

  const submit = doc.createElement("button");
  submit.className = "submit-review";
  submit.textContent = "Submit review";
  submit.disabled = !vm.submitEnabled;
  submit.addEventListener("click", () => callbacks.onSubmit(vm));
  root.appendChild(submit);
}
