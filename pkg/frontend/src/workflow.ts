/**
 * Workflow panel state machine.
 *
 * Owns one package's journey: create, the five session steps, commit.
 * A step unlocks only after the gateway confirms its predecessor — the
 * rendered stage is always the last server-confirmed one, never an
 * optimistic guess. At most one mutation is in flight at a time.
 */

import { GatewayClient, StepOutcome } from './api.js';

export const STEP_ORDER = [
  'create',
  'start',
  'scan',
  'validate',
  'quality-check',
  'label',
  'commit',
] as const;

export type StepName = (typeof STEP_ORDER)[number];

export type StepState = 'locked' | 'ready' | 'running' | 'done' | 'error';

export interface StepView {
  name: StepName;
  state: StepState;
  latencyMs: number | null;
  error: string | null;
}

export interface SessionView {
  sessionId: string | null;
  packageId: string | null;
  stage: string | null;
  status: string | null;
  l1Ref: { block_height: number; tx_hash: string } | null;
}

const STEP_PATHS: Record<Exclude<StepName, 'create' | 'start'>, string> = {
  scan: 'scan',
  validate: 'validate',
  'quality-check': 'quality-check',
  label: 'label',
  commit: 'commit',
};

export class WorkflowController {
  steps: StepView[];
  session: SessionView;
  inFlight = false;

  constructor(
    private api: GatewayClient,
    private onChange: () => void = () => {},
  ) {
    this.steps = STEP_ORDER.map((name, index) => ({
      name,
      state: index === 0 ? 'ready' : 'locked',
      latencyMs: null,
      error: null,
    }));
    this.session = { sessionId: null, packageId: null, stage: null, status: null, l1Ref: null };
  }

  step(name: StepName): StepView {
    return this.steps.find((s) => s.name === name)!;
  }

  /** Refresh the session view from a poll; server state wins. */
  applySessionRecord(record: { stage: string; status: string; l1_ref: any } | null): void {
    if (!record) return;
    this.session.stage = record.stage;
    this.session.status = record.status;
    if (record.l1_ref) this.session.l1Ref = record.l1_ref;
    this.onChange();
  }

  async run(name: StepName, packageId?: string): Promise<StepOutcome | null> {
    const step = this.step(name);
    if (this.inFlight || step.state === 'locked' || step.state === 'done') return null;
    this.inFlight = true;
    step.state = 'running';
    step.error = null;
    this.onChange();
    let outcome: StepOutcome | null = null;
    try {
      outcome = await this.dispatch(name, packageId);
      step.latencyMs = outcome.latencyMs;
      if (outcome.ok) {
        step.state = 'done';
        this.absorb(name, outcome);
        const next = STEP_ORDER[STEP_ORDER.indexOf(name) + 1];
        if (next) this.step(next).state = 'ready';
      } else {
        // Rejected: surface the reason, leave the step available.
        this.failStep(step, outcome.reason ?? `HTTP ${outcome.httpStatus}`);
      }
    } catch (err) {
      step.latencyMs = null;
      this.failStep(step, err instanceof Error ? err.message : 'network failure');
    } finally {
      this.inFlight = false;
      this.onChange();
    }
    return outcome;
  }

  private failStep(step: StepView, reason: string): void {
    step.state = 'error';
    step.error = reason;
    queueMicrotask(() => {
      // Back to clickable after the error render; the message stays up.
      step.state = 'ready';
      this.onChange();
    });
  }

  private dispatch(name: StepName, packageId?: string): Promise<StepOutcome> {
    if (name === 'create') {
      const id = packageId ?? `PKG-${Date.now()}`;
      this.session.packageId = id;
      return this.api.post('/packages', {
        package_id: id,
        expected_contents: ['gizmo', 'manual'],
      });
    }
    if (name === 'start') {
      return this.api.post('/sessions', { package_id: this.session.packageId });
    }
    const sid = this.session.sessionId;
    if (!sid) return Promise.reject(new Error('no active session'));
    return this.api.post(`/sessions/${encodeURIComponent(sid)}/${STEP_PATHS[name]}`, {});
  }

  private absorb(name: StepName, outcome: StepOutcome): void {
    if (name === 'start') {
      this.session.sessionId = outcome.sessionId;
    }
    if (typeof outcome.body?.stage === 'string') {
      this.session.stage = outcome.body.stage;
    }
    if (name === 'commit') {
      this.session.status = outcome.body?.status ?? 'Committed';
      if (outcome.body?.l1_ref) this.session.l1Ref = outcome.body.l1_ref;
    }
  }
}
