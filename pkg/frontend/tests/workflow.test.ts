import { describe, expect, it } from 'vitest';

import { GatewayClient } from '../src/api.js';
import { STEP_ORDER, WorkflowController } from '../src/workflow.js';
import { FakeGateway } from './fakegateway.js';

function setup(gateway = new FakeGateway()) {
  const api = new GatewayClient('http://fake', gateway.fetchFn, (() => {
    let t = 0;
    return () => (t += 30);
  })());
  return { gateway, workflow: new WorkflowController(api) };
}

async function runThrough(workflow: WorkflowController, upto: string) {
  for (const name of STEP_ORDER) {
    const outcome = await workflow.run(name, 'PKG-T');
    expect(outcome?.ok, `${name}: ${JSON.stringify(outcome?.body)}`).toBe(true);
    if (name === upto) break;
  }
}

describe('step unlocking', () => {
  it('only the first step starts unlocked', () => {
    const { workflow } = setup();
    expect(workflow.step('create').state).toBe('ready');
    for (const name of STEP_ORDER.slice(1)) {
      expect(workflow.step(name).state).toBe('locked');
    }
  });

  it('a locked step refuses to run', async () => {
    const { workflow, gateway } = setup();
    expect(await workflow.run('scan')).toBeNull();
    expect(gateway.calls).toEqual([]);
  });

  it('each success unlocks exactly the next step', async () => {
    const { workflow } = setup();
    await workflow.run('create', 'PKG-T');
    expect(workflow.step('create').state).toBe('done');
    expect(workflow.step('start').state).toBe('ready');
    expect(workflow.step('scan').state).toBe('locked');
  });

  it('full run reaches commit with a ledger reference', async () => {
    const { workflow } = setup();
    await runThrough(workflow, 'commit');
    expect(workflow.session.status).toBe('Committed');
    expect(workflow.session.l1Ref?.block_height).toBe(0);
    expect(workflow.session.l1Ref?.tx_hash).toMatch(/^[0-9a-f]{64}$/);
  });
});

describe('latency accounting', () => {
  it('records one client-measured round trip per step', async () => {
    const { workflow } = setup();
    await runThrough(workflow, 'scan');
    for (const name of ['create', 'start', 'scan'] as const) {
      expect(workflow.step(name).latencyMs).toBe(30);
    }
    expect(workflow.step('validate').latencyMs).toBeNull();
  });
});

describe('server-confirmed stage only', () => {
  it('stage updates come from responses, never optimistically', async () => {
    const { workflow } = setup();
    await workflow.run('create', 'PKG-T');
    expect(workflow.session.stage).toBeNull(); // no session yet
    await workflow.run('start');
    expect(workflow.session.stage).toBe('Started');
    await workflow.run('scan');
    expect(workflow.session.stage).toBe('Scanned');
  });

  it('poll records overwrite the local view', () => {
    const { workflow } = setup();
    workflow.session.sessionId = 's1';
    workflow.applySessionRecord({ stage: 'Validated', status: 'Active', l1_ref: null });
    expect(workflow.session.stage).toBe('Validated');
  });
});

describe('rejections', () => {
  it('a rejected step shows the reason and stays available', async () => {
    const gateway = new FakeGateway();
    const { workflow } = setup(gateway);
    await runThrough(workflow, 'start');
    // Fake a stage-order violation by jumping the gun server-side.
    gateway.sessions.get(workflow.session.sessionId!)!.stage = 'Validated';
    const outcome = await workflow.run('scan');
    expect(outcome?.ok).toBe(false);
    expect(workflow.step('scan').error).toBe('stage_order');
    await new Promise((resolve) => queueMicrotask(() => resolve(null)));
    expect(workflow.step('scan').state).toBe('ready'); // still clickable
    expect(workflow.session.stage).toBe('Started'); // unchanged: not confirmed
  });

  it('network failure leaves the step retryable with an error note', async () => {
    const gateway = new FakeGateway({ downPaths: ['/packages'] });
    const { workflow } = setup(gateway);
    const outcome = await workflow.run('create', 'PKG-T');
    expect(outcome).toBeNull();
    expect(workflow.step('create').error).toBeTruthy();
    await new Promise((resolve) => queueMicrotask(() => resolve(null)));
    expect(workflow.step('create').state).toBe('ready');
  });
});

describe('single in-flight mutation', () => {
  it('a second run is refused while one is pending', async () => {
    const { workflow } = setup();
    const first = workflow.run('create', 'PKG-T');
    const second = await workflow.run('create', 'PKG-T2');
    expect(second).toBeNull();
    expect((await first)?.ok).toBe(true);
  });
});
