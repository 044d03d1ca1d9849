/** Wire types for the geoagent session service. */

export type Architecture = "single" | "dual";

export interface CreateSessionForm {
  task: string;
  domain_knowledge?: string | null;
  backend?: string;
  script?: string[];
  architecture?: Architecture;
  gated?: boolean;
  data_files?: Record<string, string>;
  max_rounds?: number;
  task_budget_s?: number;
}

export interface Observation {
  stdout: string;
  stderr: string;
  new_vars: string[];
  ok: boolean;
  duration_ms: number;
  truncated_stdout: boolean;
  truncated_stderr: boolean;
}

export interface RoundData {
  index: number;
  step: string | null;
  thought: string;
  action_cell: string;
  executed: boolean;
  observation: Observation | null;
}

export interface PlanStepData {
  description: string;
  status: "pending" | "running" | "done" | "failed";
}

export interface PlanData {
  revision: number;
  steps: PlanStepData[];
}

export interface GateData {
  step: number;
  description: string;
}

export interface StatusData {
  status: "running" | "finished" | "failed";
  outcome?: string;
  error?: string;
}

export type SessionEvent =
  | { id: number; type: "round"; data: RoundData }
  | { id: number; type: "plan"; data: PlanData }
  | { id: number; type: "gate"; data: GateData }
  | { id: number; type: "gate_resolved"; data: GateData }
  | { id: number; type: "status"; data: StatusData };

export interface ArtifactInfo {
  name: string;
  size: number;
}

export interface GateDecision {
  action: "approve" | "modify";
  step: number;
  text?: string;
}
