/** HTTP client for the session service.
 *
 * The event stream is plain server-sent events parsed off a streaming fetch
 * (works in browsers and Node 20 alike, no EventSource dependency), and every
 * event carries a monotone id so a dropped stream resumes via `cursor`.
 */
import type {
  ArtifactInfo, CreateSessionForm, GateDecision, SessionEvent,
} from "./types.js";

export class ServiceError extends Error {
  constructor(public status: number, detail: string) {
    super(`service error ${status}: ${detail}`);
  }
}

export class StaleGateError extends ServiceError {}

async function raiseFor(response: Response): Promise<void> {
  if (response.ok) return;
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  if (response.status === 409) throw new StaleGateError(409, detail);
  throw new ServiceError(response.status, detail);
}

export class SessionClient {
  constructor(readonly baseUrl: string, readonly token?: string) {}

  private headers(json = true): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["Content-Type"] = "application/json";
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  async createSession(form: CreateSessionForm): Promise<{ id: string; status: string }> {
    if (!form.task || !form.task.trim()) {
      throw new ServiceError(0, "task text must be non-empty");
    }
    const response = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(form),
    });
    await raiseFor(response);
    return (await response.json()) as { id: string; status: string };
  }

  async summary(sessionId: string): Promise<{ status: string; events: number }> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}`, {
      headers: this.headers(false),
    });
    await raiseFor(response);
    return (await response.json()) as { status: string; events: number };
  }

  async postGate(sessionId: string, decision: GateDecision): Promise<void> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/gate`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(decision),
    });
    await raiseFor(response);
  }

  async fetchArtifacts(sessionId: string): Promise<ArtifactInfo[]> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/artifacts`, {
      headers: this.headers(false),
    });
    await raiseFor(response);
    return (await response.json()) as ArtifactInfo[];
  }

  /** One bounded SSE read from `cursor`; the server closes after
   * `timeoutS` quiet seconds or when the session is done. */
  async readEvents(sessionId: string, cursor = 0, timeoutS = 0.5): Promise<SessionEvent[]> {
    const url = `${this.baseUrl}/sessions/${sessionId}/events` +
      `?cursor=${cursor}&timeout_s=${timeoutS}`;
    const response = await fetch(url, { headers: this.headers(false) });
    await raiseFor(response);
    return parseSse(await response.text());
  }

  /** Follow the stream until the session finishes, reconnecting with the
   * last seen event id; yields each event exactly once. */
  async *streamEvents(sessionId: string, fromCursor = 0): AsyncGenerator<SessionEvent> {
    let cursor = fromCursor;
    for (;;) {
      const batch = await this.readEvents(sessionId, cursor, 2.0);
      for (const event of batch) {
        cursor = Math.max(cursor, event.id);
        yield event;
      }
      if (batch.some((e) => e.type === "status" &&
          (e.data.status === "finished" || e.data.status === "failed"))) {
        return;
      }
      if (batch.length === 0) {
        const state = await this.summary(sessionId);
        if (state.status !== "running" && state.status !== "starting") return;
      }
    }
  }
}

/** Parse a complete SSE body (id / event / data lines per frame). */
export function parseSse(body: string): SessionEvent[] {
  const events: SessionEvent[] = [];
  for (const frame of body.split("\n\n")) {
    let id: number | null = null;
    let type = "";
    const dataLines: string[] = [];
    for (const line of frame.split("\n")) {
      if (line.startsWith("id: ")) id = Number(line.slice(4));
      else if (line.startsWith("event: ")) type = line.slice(7);
      else if (line.startsWith("data: ")) dataLines.push(line.slice(6));
    }
    if (id === null || !type) continue;
    events.push({ id, type, data: JSON.parse(dataLines.join("\n")) } as SessionEvent);
  }
  return events;
}
