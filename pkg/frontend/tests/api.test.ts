import { describe, expect, it } from 'vitest';

import { GatewayClient } from '../src/api.js';
import { FakeGateway } from './fakegateway.js';

function client(gateway = new FakeGateway()) {
  let now = 0;
  const clock = () => (now += 25); // each fetch spans one tick: 25ms round trip
  return {
    gateway,
    api: new GatewayClient('http://fake', gateway.fetchFn, clock),
  };
}

describe('GatewayClient.post', () => {
  it('parses the envelope and measures client latency', async () => {
    const { api } = client();
    const outcome = await api.post('/packages', {
      package_id: 'P1',
      expected_contents: ['x'],
    });
    expect(outcome.ok).toBe(true);
    expect(outcome.httpStatus).toBe(201);
    expect(outcome.body.package_id).toBe('P1');
    expect(outcome.latencyMs).toBe(25);
  });

  it('surfaces rejection reasons with ok=false', async () => {
    const { api } = client();
    await api.post('/packages', { package_id: 'P1', expected_contents: ['x'] });
    const duplicate = await api.post('/packages', { package_id: 'P1', expected_contents: ['x'] });
    expect(duplicate.ok).toBe(false);
    expect(duplicate.httpStatus).toBe(409);
    expect(duplicate.reason).toBe('duplicate');
  });

  it('extracts the originator-assigned session id', async () => {
    const { api } = client();
    await api.post('/packages', { package_id: 'P1', expected_contents: ['x'] });
    const started = await api.post('/sessions', { package_id: 'P1' });
    expect(started.sessionId).toBe('l2-0-s1');
  });
});

describe('GatewayClient reads', () => {
  it('returns null for unknown resources', async () => {
    const { api } = client();
    expect(await api.getSession('ghost')).toBeNull();
    expect(await api.getTx('00'.repeat(32))).toBeNull();
  });

  it('reads session records and block pages', async () => {
    const { api } = client();
    await api.post('/packages', { package_id: 'P1', expected_contents: ['x'] });
    const started = await api.post('/sessions', { package_id: 'P1' });
    const record = await api.getSession(started.sessionId!);
    expect(record?.stage).toBe('Started');
    const page = await api.getBlocks();
    expect(page?.height).toBe(0);
    expect(page?.blocks).toEqual([]);
  });

  it('health returns null when the gateway is down', async () => {
    const { api } = client(new FakeGateway({ downPaths: ['/healthz'] }));
    expect(await api.health()).toBeNull();
  });
});
