/**
 * App shell: sign in, then loop over the rater's queue, rendering the
 * matching screen for each task until the server reports "done".
 */

import { ApiClient } from "./api.js";
import { CorrectionScreen } from "./correction.js";
import { PreferenceScreen } from "./preference.js";
import { Submission } from "./schema.js";

export async function runTaskLoop(
  root: HTMLElement,
  api: ApiClient,
  token: string,
): Promise<number> {
  let completed = 0;
  for (;;) {
    const next = await api.nextTask(token);
    if (next.status === "done" || next.task === null) break;
    const task = next.task;
    const imageUrl = next.imageUri ? api.imageUrl(next.imageUri) : null;
    root.replaceChildren();
    await new Promise<void>((resolve) => {
      const submit = async (submission: Submission) => {
        const sequence = await api.submitResponse(token, submission);
        resolve();
        return sequence;
      };
      if (task.kind === "preference") {
        root.appendChild(new PreferenceScreen(task, submit, imageUrl).element);
      } else {
        root.appendChild(new CorrectionScreen(task, submit, imageUrl).element);
      }
    });
    completed += 1;
  }
  root.replaceChildren(document.createTextNode("All assigned tasks are complete. Thank you."));
  return completed;
}

export function bootstrap(root: HTMLElement, baseUrl: string): void {
  const api = new ApiClient(baseUrl);
  const form = document.createElement("form");
  const input = document.createElement("input");
  input.placeholder = "rater id";
  const button = document.createElement("button");
  button.type = "submit";
  button.textContent = "Sign in";
  const status = document.createElement("p");
  form.append(input, button, status);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    api
      .createSession(input.value.trim())
      .then((session) => runTaskLoop(root, api, session.token))
      .catch((error) => {
        status.textContent = String(error);
      });
  });
  root.replaceChildren(form);
}
