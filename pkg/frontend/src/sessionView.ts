/** Session view-model: a pure reducer over the event feed.
 *
 * Invariants enforced here and checked by the tests:
 *  - the round feed is append-only and idempotent under event replays
 *    (events deduplicate on their id, so a reconnect can replay safely);
 *  - at most one gate is pending at a time, and while it is pending no
 *    round may arrive (any such round is counted as a safety violation).
 */
import type {
  ArtifactInfo, GateData, PlanData, RoundData, SessionEvent,
} from "./types.js";

export interface FeedCard {
  eventId: number;
  kind: "round" | "gate" | "gate_resolved" | "status";
  round?: RoundData;
  gate?: GateData;
  label: string;
}

export class SessionView {
  status = "starting";
  outcome: string | null = null;
  feed: FeedCard[] = [];
  rounds: RoundData[] = [];
  plan: PlanData | null = null;
  planHistory: PlanData[] = [];
  pendingGate: GateData | null = null;
  artifacts: ArtifactInfo[] = [];
  gateSafetyViolations = 0;
  private seen = new Set<number>();

  constructor(readonly sessionId: string) {}

  /** Apply one event; replayed ids are ignored, order within the feed is
   * whatever the server assigned. Returns true when the event was new. */
  applyEvent(event: SessionEvent): boolean {
    if (this.seen.has(event.id)) return false;
    this.seen.add(event.id);

    switch (event.type) {
      case "round": {
        if (this.pendingGate !== null) this.gateSafetyViolations += 1;
        this.rounds.push(event.data);
        this.feed.push({
          eventId: event.id,
          kind: "round",
          round: event.data,
          label: `round ${event.data.index}`,
        });
        break;
      }
      case "plan": {
        this.plan = event.data;
        this.planHistory.push(event.data);
        break;
      }
      case "gate": {
        this.pendingGate = event.data;
        this.feed.push({
          eventId: event.id,
          kind: "gate",
          gate: event.data,
          label: `awaiting approval for step ${event.data.step + 1}`,
        });
        break;
      }
      case "gate_resolved": {
        if (this.pendingGate && this.pendingGate.step === event.data.step) {
          this.pendingGate = null;
        }
        this.feed.push({
          eventId: event.id,
          kind: "gate_resolved",
          gate: event.data,
          label: `step ${event.data.step + 1} approved: ${event.data.description}`,
        });
        break;
      }
      case "status": {
        this.status = event.data.status;
        if (event.data.outcome) this.outcome = event.data.outcome;
        this.feed.push({
          eventId: event.id,
          kind: "status",
          label: `status: ${event.data.status}`,
        });
        break;
      }
    }
    return true;
  }

  applyAll(events: Iterable<SessionEvent>): number {
    let applied = 0;
    for (const event of events) if (this.applyEvent(event)) applied += 1;
    return applied;
  }

  setArtifacts(artifacts: ArtifactInfo[]): void {
    this.artifacts = artifacts;
  }

  get done(): boolean {
    return this.status === "finished" || this.status === "failed";
  }

  /** Rounds attributed to a given step description (dual-agent runs). */
  roundsForStep(description: string): RoundData[] {
    return this.rounds.filter((r) => r.step === description);
  }
}
