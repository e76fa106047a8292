import { describe, expect, it } from "vitest";

import type { ReviewBundle } from "../src/protocol.js";
import { ReviewViewModel } from "../src/review.js";

export function makeBundle(overrides: Partial<ReviewBundle> = {}): ReviewBundle {
  return {
    session: "s1",
    unscorable: false,
    video: { overall_mes: 2, peak_frame: 118, peak_probs: [0.01, 0.29, 0.69, 0.01] },
    selection: [
      { frame: 12, mes: 0, certainty: 0.93, probs: [0.93, 0.05, 0.01, 0.01], image: "sess_frame12_mes0.png" },
      { frame: 64, mes: 1, certainty: 0.88, probs: [0.05, 0.88, 0.05, 0.02], image: "sess_frame64_mes1.png" },
      { frame: 118, mes: 2, certainty: 0.74, probs: [0.01, 0.2, 0.74, 0.05], image: "sess_frame118_mes2.png" },
    ],
    summary: { total: 220, scored: 160 },
    ...overrides,
  };
}

describe("ReviewViewModel", () => {
  it("builds one card per selected frame, chronological", () => {
    const vm = new ReviewViewModel(makeBundle());
    expect(vm.cards.map((c) => c.frame)).toEqual([12, 64, 118]);
    expect(vm.overall).toBe(2);
  });

  it("submission is diff-only", () => {
    const vm = new ReviewViewModel(makeBundle());
    vm.setCorrection(64, 2);
    const { edits, journal } = vm.buildSubmission();
    expect(edits).toEqual([{ frame: 64, mes: 2 }]);
    expect(journal).toEqual([]);
  });

  it("reverting a correction removes the edit", () => {
    const vm = new ReviewViewModel(makeBundle());
    vm.setCorrection(64, 2);
    vm.setCorrection(64, 1); // back to the model's score
    expect(vm.buildSubmission().edits).toEqual([]);
  });

  it("journal picks are independent of score edits", () => {
    const vm = new ReviewViewModel(makeBundle());
    vm.toggleJournal(12);
    vm.toggleJournal(118);
    vm.toggleJournal(118);
    expect(vm.buildSubmission()).toEqual({ edits: [], journal: [12] });
  });

  it("unscorable bundle renders empty and allows zero-edit submission", () => {
    const vm = new ReviewViewModel(makeBundle({ unscorable: true, video: null, selection: [] }));
    expect(vm.overall).toBe("unscorable");
    expect(vm.cards).toEqual([]);
    expect(vm.buildSubmission()).toEqual({ edits: [], journal: [] });
  });

  it("rejects frames outside the selection", () => {
    const vm = new ReviewViewModel(makeBundle());
    expect(() => vm.setCorrection(999, 1)).toThrow(/not in the selection/);
  });

  it("submit is disabled outside the review lifecycle", () => {
    const vm = new ReviewViewModel(makeBundle(), false);
    expect(vm.submitEnabled).toBe(false);
  });
});
