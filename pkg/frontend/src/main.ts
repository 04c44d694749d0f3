/** Browser wiring: login, queue, capture detail, verdict controls. */

import { ApiError, ReviewClient } from "./api.js";
import { CaptureReview } from "./state.js";
import { captureSvg, classColor } from "./overlay.js";
import type { Decision, QueueItem } from "./types.js";

const DECISIONS: Decision[] = ["agree", "discard", "missing"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

let client: ReviewClient | null = null;
let review: CaptureReview | null = null;
let lockedCapture: number | null = null;

function setStatus(text: string, isError = false): void {
  const status = el<HTMLElement>("status");
  status.textContent = text;
  status.classList.toggle("error", isError);
}

async function refreshQueue(): Promise<void> {
  if (!client) return;
  const items = await client.queue();
  const list = el<HTMLUListElement>("queue");
  list.replaceChildren();
  for (const item of items) {
    list.appendChild(queueEntry(item));
  }
  el<HTMLElement>("queue-empty").hidden = items.length > 0;
}

function queueEntry(item: QueueItem): HTMLLIElement {
  const li = document.createElement("li");
  const classes = Object.entries(item.classes)
    .map(([name, count]) => `${name} x${count}`)
    .join(", ");
  const button = document.createElement("button");
  button.textContent = `capture ${item.capture_id}`;
  button.addEventListener("click", () => {
    void openCapture(item.capture_id);
  });
  const summary = document.createElement("span");
  summary.className = "entry-classes";
  summary.textContent = [
    classes || "no instances",
    item.has_sidewalk ? "sidewalk" : "no sidewalk",
    item.locked ? "locked" : "",
  ]
    .filter(Boolean)
    .join(" | ");
  li.append(button, summary);
  return li;
}

async function openCapture(captureId: number): Promise<void> {
  if (!client) return;
  try {
    if (lockedCapture !== null && lockedCapture !== captureId) {
      await client.unlock(lockedCapture).catch(() => undefined);
      lockedCapture = null;
    }
    await client.lock(captureId);
    lockedCapture = captureId;
    review = new CaptureReview(await client.capture(captureId));
    renderDetail();
    setStatus(`reviewing capture ${captureId}`);
  } catch (err) {
    setStatus(describe(err), true);
  }
}

function renderDetail(): void {
  const panel = el<HTMLElement>("detail");
  panel.hidden = review === null;
  if (!review) return;

  const rejected = new Set<number>();
  for (const name of review.classNames()) {
    for (const instance of review.instancesOf(name)) {
      if (review.isRejected(name, instance.instance_id)) {
        rejected.add(instance.instance_id);
      }
    }
  }
  el<HTMLElement>("overlay").innerHTML = captureSvg(review.capture, rejected);

  const controls = el<HTMLElement>("classes");
  controls.replaceChildren();
  for (const name of review.classNames()) {
    controls.appendChild(classControls(name));
  }

  const widthRow = el<HTMLElement>("width-row");
  const sidewalk = review.capture.sidewalk;
  widthRow.hidden = sidewalk === null;
  if (sidewalk) {
    el<HTMLElement>("width-value").textContent = `${sidewalk.width_m.toFixed(2)} m`;
    const box = el<HTMLInputElement>("width-accept");
    box.checked = review.widthAccepted;
    box.onchange = () => {
      if (review) review.widthAccepted = box.checked;
    };
  }
  renderSubmit();
}

function classControls(name: string): HTMLElement {
  if (!review) throw new Error("no active review");
  const row = document.createElement("fieldset");
  row.className = "class-row";
  const legend = document.createElement("legend");
  legend.textContent = name;
  legend.style.color = classColor(name);
  row.appendChild(legend);

  const current = review.decisionFor(name);
  for (const decision of DECISIONS) {
    const label = document.createElement("label");
    const radio = document.createElement("input");
    radio.type = "radio";
    radio.name = `decision-${name}`;
    radio.value = decision;
    radio.checked = current === decision;
    radio.addEventListener("change", () => {
      review?.decide(name, decision);
      renderDetail();
    });
    label.append(radio, decision);
    row.appendChild(label);
  }

  // instance strikes only make sense once the class is agreed
  const agreeing = current === "agree";
  for (const instance of review.instancesOf(name)) {
    const label = document.createElement("label");
    label.className = "instance-toggle";
    const box = document.createElement("input");
    box.type = "checkbox";
    box.disabled = !agreeing;
    box.checked = agreeing && review.isRejected(name, instance.instance_id);
    box.addEventListener("change", () => {
      review?.toggleRejection(name, instance.instance_id);
      renderDetail();
    });
    label.append(box, `reject #${instance.instance_id}`);
    row.appendChild(label);
  }
  return row;
}

function renderSubmit(): void {
  if (!review) return;
  const button = el<HTMLButtonElement>("submit");
  const hint = el<HTMLElement>("submit-hint");
  const missing = review.undecided();
  button.disabled = missing.length > 0;
  hint.textContent =
    missing.length > 0 ? `still undecided: ${missing.join(", ")}` : "";
}

async function submitVerdict(): Promise<void> {
  if (!client || !review) return;
  try {
    const outcome = await client.submit(review);
    const closed = outcome.changeset_closed
      ? `, changeset closed${outcome.way_id !== null ? `, way ${outcome.way_id}` : ""}`
      : "";
    setStatus(`staged ${outcome.staged_nodes.length} nodes${closed}`);
    review = null;
    lockedCapture = null;
    renderDetail();
    await refreshQueue();
  } catch (err) {
    setStatus(describe(err), true);
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `service said ${err.status}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

function boot(): void {
  el<HTMLFormElement>("login").addEventListener("submit", (event) => {
    event.preventDefault();
    const user = el<HTMLInputElement>("user").value;
    const secret = el<HTMLInputElement>("secret").value;
    client = new ReviewClient("", { userId: user, secret });
    void refreshQueue()
      .then(() => setStatus(`signed in as ${user}`))
      .catch((err) => {
        client = null;
        setStatus(describe(err), true);
      });
  });
  el<HTMLButtonElement>("submit").addEventListener("click", () => {
    void submitVerdict();
  });
  el<HTMLButtonElement>("refresh").addEventListener("click", () => {
    void refreshQueue().catch((err) => setStatus(describe(err), true));
  });
}

boot();
