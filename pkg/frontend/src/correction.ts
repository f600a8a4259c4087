/**
 * Error-correction screen. The image-quality gate comes first; a "no"
 * answer submits the task immediately with zero edits and the flag set.
 * Otherwise the rater selects passages of the displayed report (spans
 * snap to whole words and may not overlap), picks one of the three
 * disagreement reasons, marks clinical significance, and types a
 * replacement. Spans are sent as character offsets into the exact
 * delivered text together with that text's SHA-256, which is verified
 * against the server-provided hash before anything is submitted.
 */

import {
  CorrectionSubmission,
  CorrectionTask,
  REASONS,
  REASON_LABELS,
  Reason,
  SpanEdit,
  buildCorrectionSubmission,
} from "./schema.js";
import { CharSpan, sha256Hex, snapToWordBoundaries, spanIsFree } from "./spans.js";
import { attachZoom } from "./zoom.js";

export type SubmitFn = (submission: CorrectionSubmission) => Promise<number>;

interface Draft {
  span: CharSpan;
  reason: Reason;
  clinicallySignificant: boolean;
  replacement: string;
}

export class CorrectionScreen {
  readonly element: HTMLElement;
  private phase: "gate" | "annotate" | "submitted" = "gate";
  private readonly committed: SpanEdit[] = [];
  private draft: Draft | null = null;
  private hashOk: boolean | null = null;
  private readonly hashCheck: Promise<boolean>;
  private readonly annotateRoot: HTMLElement;
  private readonly gateRoot: HTMLElement;
  private readonly statusLine: HTMLElement;
  private textPre: HTMLPreElement | null = null;

  constructor(
    private readonly task: CorrectionTask,
    private readonly submitFn: SubmitFn,
    imageUrl: string | null = null,
    private readonly now: () => number = () => Date.now() / 1000,
  ) {
    this.element = document.createElement("div");
    this.element.className = "correction-screen";
    this.statusLine = document.createElement("p");
    this.statusLine.className = "status";

    if (imageUrl) {
      const figure = document.createElement("figure");
      const image = document.createElement("img");
      image.src = imageUrl;
      image.alt = "chest radiograph";
      const controls = document.createElement("div");
      controls.className = "zoom-controls";
      figure.append(image, controls);
      attachZoom(image, controls);
      this.element.appendChild(figure);
    }

    // the gate must be answered before the report is shown
    this.gateRoot = document.createElement("div");
    this.gateRoot.className = "quality-gate";
    const question = document.createElement("p");
    question.textContent = "Is the presented image of sufficient quality to complete the task?";
    const yes = document.createElement("button");
    yes.type = "button";
    yes.textContent = "Yes";
    yes.dataset.action = "gate-yes";
    yes.addEventListener("click", () => void this.answerQualityGate(true));
    const no = document.createElement("button");
    no.type = "button";
    no.textContent = "No";
    no.dataset.action = "gate-no";
    no.addEventListener("click", () => void this.answerQualityGate(false));
    this.gateRoot.append(question, yes, no);
    this.element.appendChild(this.gateRoot);

    this.annotateRoot = document.createElement("div");
    this.annotateRoot.className = "annotate";
    this.annotateRoot.hidden = true;
    this.element.append(this.annotateRoot, this.statusLine);

    this.hashCheck = sha256Hex(task.report_text).then((digest) => {
      this.hashOk = digest === task.report_text_sha256;
      if (!this.hashOk) {
        this.statusLine.textContent = "Displayed text does not match the server hash; reload.";
      }
      return this.hashOk;
    });
  }

  /**
   * Answer the gate. "No" completes the task right away with zero edits
   * and the flag; "Yes" reveals the annotation surface.
   */
  async answerQualityGate(ok: boolean): Promise<number | null> {
    if (this.phase !== "gate") throw new Error("gate already answered");
    this.gateRoot.hidden = true;
    if (!ok) {
      return this.submitInternal(false);
    }
    this.phase = "annotate";
    this.renderAnnotationSurface();
    return null;
  }

  private renderAnnotationSurface(): void {
    this.annotateRoot.hidden = false;
    const pre = document.createElement("pre");
    pre.className = "report-text selectable";
    pre.textContent = this.task.report_text;
    pre.addEventListener("mouseup", () => this.captureDomSelection());
    this.textPre = pre;

    const reasonSelect = document.createElement("select");
    reasonSelect.dataset.field = "reason";
    for (const reason of REASONS) {
      const option = document.createElement("option");
      option.value = reason;
      option.textContent = REASON_LABELS[reason];
      reasonSelect.appendChild(option);
    }
    reasonSelect.addEventListener("change", () =>
      this.setDraftReason(reasonSelect.value as Reason),
    );

    const significant = document.createElement("input");
    significant.type = "checkbox";
    significant.dataset.field = "clinically-significant";
    significant.addEventListener("change", () =>
      this.setDraftSignificance(significant.checked),
    );
    const significantLabel = document.createElement("label");
    significantLabel.append(significant, document.createTextNode("clinically significant"));

    const replacement = document.createElement("input");
    replacement.type = "text";
    replacement.dataset.field = "replacement";
    replacement.placeholder = "replacement text";
    replacement.addEventListener("input", () => this.setDraftReplacement(replacement.value));

    const addButton = document.createElement("button");
    addButton.type = "button";
    addButton.dataset.action = "add-edit";
    addButton.textContent = "Add correction";
    addButton.addEventListener("click", () => this.commitDraft());

    const editList = document.createElement("ul");
    editList.dataset.role = "edit-list";

    const submitButton = document.createElement("button");
    submitButton.type = "button";
    submitButton.dataset.action = "submit";
    submitButton.textContent = "Submit assessment";
    submitButton.addEventListener("click", () => void this.submit());

    this.annotateRoot.append(
      pre,
      reasonSelect,
      significantLabel,
      replacement,
      addButton,
      editList,
      submitButton,
    );
  }

  private captureDomSelection(): void {
    const selection = document.getSelection();
    if (!selection || selection.rangeCount === 0 || !this.textPre) return;
    const range = selection.getRangeAt(0);
    if (
      range.startContainer !== this.textPre.firstChild ||
      range.endContainer !== this.textPre.firstChild
    ) {
      return;
    }
    this.beginSelection(range.startOffset, range.endOffset);
  }

  /**
   * Start a draft edit from raw selection offsets. Snaps to whole words;
   * selections overlapping an existing edit are blocked client-side.
   * Returns the snapped span, or null when rejected.
   */
  beginSelection(rawStart: number, rawEnd: number): CharSpan | null {
    if (this.phase !== "annotate") throw new Error("answer the quality gate first");
    const snapped = snapToWordBoundaries(this.task.report_text, rawStart, rawEnd);
    if (snapped === null) {
      this.statusLine.textContent = "Selection contains no words.";
      return null;
    }
    if (!spanIsFree(snapped, this.committed)) {
      this.statusLine.textContent = "Selection overlaps an existing correction.";
      return null;
    }
    this.draft = {
      span: snapped,
      reason: REASONS[0],
      clinicallySignificant: false,
      replacement: "",
    };
    this.statusLine.textContent = `Selected: "${this.selectedText()}"`;
    return snapped;
  }

  selectedText(): string {
    if (!this.draft) return "";
    return this.task.report_text.slice(this.draft.span.start, this.draft.span.end);
  }

  setDraftReason(reason: Reason): void {
    if (this.draft) this.draft.reason = reason;
  }

  setDraftSignificance(significant: boolean): void {
    if (this.draft) this.draft.clinicallySignificant = significant;
  }

  setDraftReplacement(text: string): void {
    if (this.draft) this.draft.replacement = text;
  }

  /** Commit the draft edit; requires a selection and a replacement. */
  commitDraft(): SpanEdit | null {
    if (!this.draft || this.draft.replacement.trim() === "") {
      this.statusLine.textContent = "Select a passage and provide a replacement first.";
      return null;
    }
    const edit: SpanEdit = {
      start: this.draft.span.start,
      end: this.draft.span.end,
      reason: this.draft.reason,
      clinically_significant: this.draft.clinicallySignificant,
      replacement: this.draft.replacement,
    };
    this.committed.push(edit);
    this.draft = null;
    const list = this.annotateRoot.querySelector('[data-role="edit-list"]');
    if (list) {
      const item = document.createElement("li");
      item.textContent = `[${edit.start}, ${edit.end}) ${edit.reason}: "${edit.replacement}"`;
      list.appendChild(item);
    }
    this.statusLine.textContent = "";
    return edit;
  }

  get edits(): readonly SpanEdit[] {
    return this.committed;
  }

  /** Submit the completed assessment (gate passed, any number of edits). */
  async submit(): Promise<number> {
    if (this.phase !== "annotate") throw new Error("nothing to submit");
    return this.submitInternal(true);
  }

  private async submitInternal(imageQualityOk: boolean): Promise<number> {
    const hashOk = await this.hashCheck;
    if (!hashOk) {
      throw new Error("displayed-text hash mismatch; refusing to submit");
    }
    const edits = imageQualityOk
      ? [...this.committed].sort((a, b) => a.start - b.start)
      : [];
    const submission = buildCorrectionSubmission(
      this.task.task_id,
      imageQualityOk,
      edits,
      this.task.report_text_sha256,
      this.now(),
    );
    const sequence = await this.submitFn(submission);
    this.phase = "submitted";
    this.clearReportText();
    this.statusLine.textContent = "Assessment recorded.";
    return sequence;
  }

  /** Study hygiene: report text does not persist after completion. */
  private clearReportText(): void {
    this.annotateRoot.replaceChildren();
    this.annotateRoot.hidden = true;
    this.textPre = null;
  }
}
