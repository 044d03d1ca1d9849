/** Browser wiring: form submission, live feed rendering, gate panel.
 *
 * Kept deliberately thin: all state transitions live in SessionView, all
 * I/O in SessionClient, so the behavior under test in test/console.test.ts
 * is exactly the behavior the page runs.
 */
import { SessionClient, StaleGateError } from "./client.js";
import { SessionView } from "./sessionView.js";
import type { Architecture, SessionEvent } from "./types.js";

const PREVIEWABLE = [".png", ".jpg", ".jpeg", ".svg", ".csv"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function cardNode(label: string, body: string, kind: string): HTMLElement {
  const card = document.createElement("div");
  card.className = `card card-${kind}`;
  const head = document.createElement("div");
  head.className = "card-label";
  head.textContent = label;
  const pre = document.createElement("pre");
  pre.textContent = body;
  card.append(head, pre);
  return card;
}

export class ConsoleApp {
  private client: SessionClient;
  private view: SessionView | null = null;

  constructor(baseUrl: string) {
    this.client = new SessionClient(baseUrl);
  }

  bind(): void {
    el<HTMLFormElement>("session-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submit();
    });
  }

  private async submit(): Promise<void> {
    const task = el<HTMLTextAreaElement>("task-text").value;
    if (!task.trim()) {
      el("form-error").textContent = "Task text must not be empty.";
      return;
    }
    el("form-error").textContent = "";
    const dk = el<HTMLTextAreaElement>("dk-text").value;
    const architecture = el<HTMLSelectElement>("architecture").value as Architecture;
    const gated = el<HTMLInputElement>("gated").checked;
    const backend = el<HTMLInputElement>("backend").value || "scripted";

    const created = await this.client.createSession({
      task,
      domain_knowledge: dk.trim() ? dk : null,
      backend,
      architecture,
      gated,
    });
    this.view = new SessionView(created.id);
    el("session-id").textContent = created.id;
    el("feed").replaceChildren();
    void this.follow();
  }

  private async follow(): Promise<void> {
    if (!this.view) return;
    const view = this.view;
    for await (const event of this.client.streamEvents(view.sessionId)) {
      if (view.applyEvent(event)) this.render(event);
    }
    view.setArtifacts(await this.client.fetchArtifacts(view.sessionId));
    this.renderArtifacts();
  }

  private render(event: SessionEvent): void {
    const feed = el("feed");
    const view = this.view!;
    if (event.type === "round") {
      const r = event.data;
      const obs = r.observation;
      const body = [
        r.thought && `THOUGHT: ${r.thought}`,
        r.action_cell && `ACTION:\n${r.action_cell}`,
        obs && `OBSERVATION (ok=${obs.ok}):\n${obs.stdout}${obs.stderr}`,
      ].filter(Boolean).join("\n");
      feed.append(cardNode(
        r.step ? `round ${r.index} · ${r.step}` : `round ${r.index}`,
        body, r.executed ? "round" : "skipped"));
    } else if (event.type === "plan") {
      const lines = event.data.steps
        .map((s, i) => `${i + 1}. [${s.status}] ${s.description}`).join("\n");
      feed.append(cardNode(`plan revision ${event.data.revision}`, lines, "plan"));
    } else if (event.type === "gate") {
      this.renderGatePanel(event.data.step, event.data.description);
    } else if (event.type === "gate_resolved") {
      el("gate-panel").replaceChildren();
      feed.append(cardNode(`step ${event.data.step + 1} approved`,
        event.data.description, "gate"));
    } else if (event.type === "status") {
      el("status").textContent =
        view.outcome ? `${view.status} (${view.outcome})` : view.status;
    }
  }

  private renderGatePanel(step: number, description: string): void {
    const panel = el("gate-panel");
    panel.replaceChildren();
    const text = document.createElement("textarea");
    text.value = description;
    const approve = document.createElement("button");
    approve.textContent = `Approve step ${step + 1}`;
    const modify = document.createElement("button");
    modify.textContent = "Modify & run";
    const note = document.createElement("span");
    const act = async (decision: "approve" | "modify") => {
      try {
        await this.client.postGate(this.view!.sessionId, {
          action: decision,
          step,
          text: decision === "modify" ? text.value : undefined,
        });
        panel.replaceChildren();
      } catch (err) {
        note.textContent = err instanceof StaleGateError
          ? "This gate was already resolved."
          : String(err);
      }
    };
    approve.addEventListener("click", () => void act("approve"));
    modify.addEventListener("click", () => void act("modify"));
    panel.append(text, approve, modify, note);
  }

  private renderArtifacts(): void {
    const list = el("artifacts");
    list.replaceChildren();
    for (const artifact of this.view?.artifacts ?? []) {
      const item = document.createElement("li");
      const link = document.createElement("a");
      link.href = `${this.client.baseUrl}/sessions/${this.view!.sessionId}` +
        `/artifacts/${artifact.name}`;
      link.textContent = `${artifact.name} (${artifact.size} bytes)`;
      const previewable = PREVIEWABLE.some((ext) => artifact.name.endsWith(ext));
      if (!previewable) link.setAttribute("download", artifact.name);
      item.append(link);
      list.append(item);
    }
  }
}

declare global {
  interface Window { consoleApp?: ConsoleApp }
}

if (typeof document !== "undefined" && document.getElementById("session-form")) {
  const app = new ConsoleApp(window.location.origin.replace(/\/$/, ""));
  app.bind();
  window.consoleApp = app;
}
