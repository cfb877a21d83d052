/**
 * Operator console: DOM wiring.
 *
 * One workflow panel driving a package through its five session steps
 * plus commit, and a ledger explorer over the gateway's block endpoints.
 * All state lives in the controllers; this module only renders it.
 */

import { GatewayClient } from './api.js';
import { formatMs, latencyBand, shortHash } from './format.js';
import { LedgerController } from './ledger.js';
import { STEP_ORDER, StepName, WorkflowController } from './workflow.js';

export interface AppOptions {
  baseUrl?: string;
  fetchFn?: (input: string, init?: RequestInit) => Promise<Response>;
  pollMs?: number;
}

export interface AppHandle {
  workflow: WorkflowController;
  ledger: LedgerController;
  api: GatewayClient;
  stop: () => void;
  pollOnce: () => Promise<void>;
}

const STEP_LABELS: Record<StepName, string> = {
  create: 'Create package',
  start: 'Start session',
  scan: 'Scan',
  validate: 'Validate origin',
  'quality-check': 'Quality check',
  label: 'Label + courier',
  commit: 'Commit to ledger',
};

export function initApp(root: HTMLElement, options: AppOptions = {}): AppHandle {
  const baseUrl = options.baseUrl ?? 'http://127.0.0.1:8080';
  root.innerHTML = `
    <header>
      <h1>sessionbft console</h1>
      <span id="health" class="health">connecting…</span>
    </header>
    <main>
      <section class="panel" id="workflow-panel">
        <h2>Package workflow</h2>
        <div id="session-info" class="session-info">no session yet</div>
        <ol id="steps"></ol>
      </section>
      <section class="panel" id="ledger-panel">
        <h2>Ledger</h2>
        <div id="ledger-banner" class="banner" hidden></div>
        <div class="ledger-bar">
          <span id="ledger-height">height 0</span>
          <button id="ledger-refresh">refresh</button>
          <input id="tx-search" placeholder="tx hash…" size="24" />
          <button id="tx-search-go">find</button>
          <span id="tx-search-result"></span>
        </div>
        <table id="blocks">
          <thead><tr><th>height</th><th>hash</th><th>proposer</th><th>txs</th><th>votes</th></tr></thead>
          <tbody></tbody>
        </table>
        <div id="ledger-empty" class="empty" hidden>No blocks committed yet.</div>
        <pre id="block-detail" hidden></pre>
      </section>
    </main>
  `;

  const api = new GatewayClient(baseUrl, options.fetchFn);
  const workflow = new WorkflowController(api, renderWorkflow);
  const ledger = new LedgerController(api, renderLedger);

  const stepsRoot = root.querySelector('#steps') as HTMLOListElement;
  for (const name of STEP_ORDER) {
    const item = document.createElement('li');
    item.dataset.step = name;
    item.innerHTML = `
      <button type="button" data-step-button="${name}">${STEP_LABELS[name]}</button>
      <span class="spinner" hidden></span>
      <span class="badge" data-latency hidden></span>
      <span class="step-error" data-error hidden></span>
    `;
    stepsRoot.appendChild(item);
    const button = item.querySelector('button')!;
    button.addEventListener('click', async () => {
      await workflow.run(name);
      if (name === 'commit') await ledger.refresh();
    });
  }

  function renderWorkflow(): void {
    for (const step of workflow.steps) {
      const item = stepsRoot.querySelector(`li[data-step="${step.name}"]`)!;
      const button = item.querySelector('button')!;
      const spinner = item.querySelector('.spinner') as HTMLElement;
      const badge = item.querySelector('[data-latency]') as HTMLElement;
      const error = item.querySelector('[data-error]') as HTMLElement;
      button.disabled = step.state === 'locked' || step.state === 'running' ||
        step.state === 'done' || workflow.inFlight;
      item.className = `step-${step.state}`;
      spinner.hidden = step.state !== 'running';
      if (step.latencyMs != null) {
        badge.hidden = false;
        badge.textContent = formatMs(step.latencyMs);
        badge.className = `badge badge-${latencyBand(step.latencyMs)}`;
      } else {
        badge.hidden = true;
      }
      error.hidden = !step.error;
      error.textContent = step.error ?? '';
    }
    const info = root.querySelector('#session-info') as HTMLElement;
    const s = workflow.session;
    if (!s.sessionId && !s.packageId) {
      info.textContent = 'no session yet';
    } else {
      const parts = [];
      if (s.packageId) parts.push(`package <b>${s.packageId}</b>`);
      if (s.sessionId) parts.push(`session <b>${s.sessionId}</b>`);
      if (s.stage) parts.push(`stage <b data-stage>${s.stage}</b>`);
      if (s.status) parts.push(`status <b data-status>${s.status}</b>`);
      if (s.l1Ref) {
        parts.push(
          `committed at height <b data-block-height>${s.l1Ref.block_height}</b>, ` +
          `tx <code data-tx-hash title="${s.l1Ref.tx_hash}">${shortHash(s.l1Ref.tx_hash, 16)}</code>`,
        );
      }
      info.innerHTML = parts.join(' · ');
    }
  }

  function renderLedger(): void {
    const state = ledger.state;
    (root.querySelector('#ledger-height') as HTMLElement).textContent = `height ${state.height}`;
    (root.querySelector('#ledger-banner') as HTMLElement).hidden = !state.stale;
    (root.querySelector('#ledger-banner') as HTMLElement).textContent =
      state.stale ? 'gateway unreachable — showing last known data' : '';
    const tbody = root.querySelector('#blocks tbody') as HTMLElement;
    tbody.innerHTML = '';
    for (const block of state.blocks) {
      const row = document.createElement('tr');
      row.dataset.height = String(block.height);
      if (state.highlightHeight === block.height) row.classList.add('highlight');
      row.innerHTML = `
        <td>${block.height}</td>
        <td><code>${shortHash(block.block_hash)}</code></td>
        <td>${block.proposer_id}</td>
        <td>${block.tx_count}</td>
        <td>${block.quorum_size}</td>
      `;
      row.addEventListener('click', () => void ledger.expand(block.height));
      tbody.appendChild(row);
    }
    (root.querySelector('#ledger-empty') as HTMLElement).hidden = state.blocks.length > 0;
    const detail = root.querySelector('#block-detail') as HTMLElement;
    if (state.expandedBlock != null) {
      detail.hidden = false;
      detail.textContent = JSON.stringify(summarizeBlock(state.expandedBlock), null, 2);
    } else {
      detail.hidden = true;
    }
  }

  function summarizeBlock(block: any): any {
    return {
      height: block.height,
      proposer: block.proposer_id,
      block_hash: block.block_hash,
      batches: (block.tx_list ?? []).map((batch: any) => ({
        session_id: batch.session_id,
        originator: batch.originator_id,
        operations: (batch.operations ?? []).map((op: any) => op.request?.route),
      })),
    };
  }

  root.querySelector('#ledger-refresh')!.addEventListener('click', () => void ledger.refresh());
  root.querySelector('#tx-search-go')!.addEventListener('click', async () => {
    const input = root.querySelector('#tx-search') as HTMLInputElement;
    const result = root.querySelector('#tx-search-result') as HTMLElement;
    const height = await ledger.findTx(input.value);
    result.textContent = height == null ? 'not found' : `block ${height}`;
  });

  async function pollOnce(): Promise<void> {
    const health = root.querySelector('#health') as HTMLElement;
    const status = await api.health();
    health.textContent = status
      ? `${status.node_id} (${status.config})`
      : 'gateway unreachable';
    health.className = status ? 'health health-ok' : 'health health-down';
    if (workflow.session.sessionId && !workflow.inFlight) {
      const record = await api.getSession(workflow.session.sessionId);
      workflow.applySessionRecord(record);
    }
  }

  let timer: ReturnType<typeof setInterval> | null = null;
  if (options.pollMs !== 0) {
    timer = setInterval(() => void pollOnce(), options.pollMs ?? 1000);
  }
  void pollOnce();
  void ledger.refresh();
  renderWorkflow();

  return {
    workflow,
    ledger,
    api,
    pollOnce,
    stop: () => {
      if (timer) clearInterval(timer);
    },
  };
}

declare global {
  interface Window {
    SESSIONBFT_GATEWAY?: string;
  }
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  const params = new URLSearchParams(window.location.search);
  // Served by the gateway itself (under /console) the API is same-origin.
  const sameOrigin = window.location.pathname.startsWith('/console')
    ? window.location.origin
    : null;
  initApp(document.getElementById('app')!, {
    baseUrl:
      params.get('gateway') ?? window.SESSIONBFT_GATEWAY ?? sameOrigin ?? 'http://127.0.0.1:8080',
  });
}
