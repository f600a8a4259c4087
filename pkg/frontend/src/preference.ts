/**
 * Pairwise preference screen: the case image (zoomable), two blinded
 * reports side by side, a three-way choice, and a required free-text
 * justification. Submit stays disabled until both the choice and the
 * justification are set. Report text is removed from the DOM once the
 * response is accepted.
 */

import {
  PreferenceSubmission,
  PreferenceTask,
  buildPreferenceSubmission,
} from "./schema.js";
import { attachZoom } from "./zoom.js";

export type SubmitFn = (submission: PreferenceSubmission) => Promise<number>;

const CHOICES: ReadonlyArray<{ value: "A" | "B" | "EQUIVALENT"; label: string }> = [
  { value: "A", label: "Report A is more useful" },
  { value: "B", label: "Report B is more useful" },
  { value: "EQUIVALENT", label: "Neither is better than the other" },
];

/** Render one report as a fixed-width block with bolded section headers. */
function renderReport(slot: "A" | "B", text: string): HTMLElement {
  const section = document.createElement("section");
  section.className = "report-block";
  section.dataset.slot = slot;
  const heading = document.createElement("h3");
  heading.textContent = `Report ${slot}`;
  section.appendChild(heading);
  const [findings, impression] = text.includes("\n")
    ? [text.slice(0, text.indexOf("\n")), text.slice(text.indexOf("\n") + 1)]
    : ["", text];
  for (const [header, body] of [
    ["FINDINGS", findings],
    ["IMPRESSION", impression],
  ] as const) {
    if (!body) continue;
    const label = document.createElement("b");
    label.textContent = `${header}:`;
    const pre = document.createElement("pre");
    pre.className = "report-text";
    pre.textContent = body;
    section.append(label, pre);
  }
  return section;
}

export class PreferenceScreen {
  readonly element: HTMLElement;
  private choice: "A" | "B" | "EQUIVALENT" | null = null;
  private readonly justificationInput: HTMLTextAreaElement;
  private readonly submitButton: HTMLButtonElement;
  private readonly statusLine: HTMLElement;
  private submitted = false;

  constructor(
    private readonly task: PreferenceTask,
    private readonly submitFn: SubmitFn,
    imageUrl: string | null = null,
    private readonly now: () => number = () => Date.now() / 1000,
  ) {
    this.element = document.createElement("div");
    this.element.className = "preference-screen";

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

    const reports = document.createElement("div");
    reports.className = "report-pair";
    reports.append(renderReport("A", task.report_a), renderReport("B", task.report_b));
    this.element.appendChild(reports);

    const form = document.createElement("form");
    for (const { value, label } of CHOICES) {
      const wrapper = document.createElement("label");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = "choice";
      radio.value = value;
      radio.addEventListener("change", () => this.setChoice(value));
      wrapper.append(radio, document.createTextNode(label));
      form.appendChild(wrapper);
    }
    this.justificationInput = document.createElement("textarea");
    this.justificationInput.placeholder = "Justify your preference (required)";
    this.justificationInput.addEventListener("input", () => this.updateSubmitState());
    this.submitButton = document.createElement("button");
    this.submitButton.type = "button";
    this.submitButton.textContent = "Submit";
    this.submitButton.disabled = true;
    this.submitButton.addEventListener("click", () => void this.submit());
    this.statusLine = document.createElement("p");
    this.statusLine.className = "status";
    form.append(this.justificationInput, this.submitButton, this.statusLine);
    this.element.appendChild(form);
  }

  setChoice(choice: "A" | "B" | "EQUIVALENT"): void {
    this.choice = choice;
    this.updateSubmitState();
  }

  setJustification(text: string): void {
    this.justificationInput.value = text;
    this.updateSubmitState();
  }

  get submitEnabled(): boolean {
    return !this.submitButton.disabled;
  }

  private updateSubmitState(): void {
    const ready =
      !this.submitted &&
      this.choice !== null &&
      this.justificationInput.value.trim().length > 0;
    this.submitButton.disabled = !ready;
  }

  /** Build, validate, and send the response; returns the sequence number. */
  async submit(): Promise<number> {
    if (this.submitButton.disabled || this.choice === null) {
      throw new Error("submit requires a choice and a justification");
    }
    const submission = buildPreferenceSubmission(
      this.task.task_id,
      this.choice,
      this.justificationInput.value.trim(),
      this.now(),
    );
    const sequence = await this.submitFn(submission);
    this.submitted = true;
    this.clearReportText();
    this.statusLine.textContent = "Response recorded.";
    this.updateSubmitState();
    return sequence;
  }

  /** Study hygiene: report text does not persist after completion. */
  private clearReportText(): void {
    this.element.querySelectorAll(".report-pair").forEach((node) => node.remove());
  }
}
