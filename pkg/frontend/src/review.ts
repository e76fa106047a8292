// Post-procedure review view model: the selected frames with editable
// scores and journal checkboxes. Submission is diff-only: a frame
// contributes an edit exactly when its corrected score differs from the
// model's.

import type { Edit, Mes, ReviewBundle } from "./protocol.js";

export interface FrameCard {
  frame: number;
  image: string;
  modelMes: Mes;
  correctedMes: Mes;
  inJournal: boolean;
}

export interface Submission {
  edits: Edit[];
  journal: number[];
}

export class ReviewViewModel {
  readonly session: string;
  readonly overall: Mes | "unscorable";
  readonly cards: FrameCard[];
  submitEnabled: boolean;

  constructor(bundle: ReviewBundle, inReview = true) {
    this.session = bundle.session;
    this.overall = bundle.unscorable || bundle.video === null ? "unscorable" : bundle.video.overall_mes;
    this.cards = bundle.selection.map((entry) => ({
      frame: entry.frame,
      image: entry.image,
      modelMes: entry.mes,
      correctedMes: entry.mes,
      inJournal: false,
    }));
    this.submitEnabled = inReview;
  }

  private card(frame: number): FrameCard {
    const card = this.cards.find((c) => c.frame === frame);
    if (!card) {
      throw new Error(`frame ${frame} is not in the selection`);
    }
    return card;
  }

  setCorrection(frame: number, mes: Mes): void {
    this.card(frame).correctedMes = mes;
  }

  toggleJournal(frame: number): void {
    const card = this.card(frame);
    card.inJournal = !card.inJournal;
  }

  buildSubmission(): Submission {
    return {
      edits: this.cards
        .filter((c) => c.correctedMes !== c.modelMes)
        .map((c) => ({ frame: c.frame, mes: c.correctedMes })),
      journal: this.cards.filter((c) => c.inJournal).map((c) => c.frame),
    };
  }
}
