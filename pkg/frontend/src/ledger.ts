/**
 * Ledger explorer state: paged block list with drill-down.
 *
 * A read-only projection of the gateway's block endpoints; nothing here
 * is authoritative. When the endpoint stops answering, the last good
 * view stays up behind a stale-data banner.
 */

import { BlockSummary, GatewayClient } from './api.js';

export interface LedgerState {
  height: number;
  blocks: BlockSummary[];
  offset: number;
  pageSize: number;
  stale: boolean;
  expandedHeight: number | null;
  expandedBlock: any | null;
  highlightHeight: number | null;
}

export class LedgerController {
  state: LedgerState = {
    height: 0,
    blocks: [],
    offset: 0,
    pageSize: 20,
    stale: false,
    expandedHeight: null,
    expandedBlock: null,
    highlightHeight: null,
  };

  constructor(
    private api: GatewayClient,
    private onChange: () => void = () => {},
  ) {}

  async refresh(): Promise<void> {
    try {
      const page = await this.api.getBlocks(this.state.offset, this.state.pageSize);
      if (page) {
        this.state.height = page.height;
        this.state.blocks = page.blocks;
        this.state.stale = false;
      }
    } catch {
      this.state.stale = true;
    }
    this.onChange();
  }

  async page(offset: number): Promise<void> {
    this.state.offset = Math.max(0, offset);
    await this.refresh();
  }

  async expand(height: number): Promise<void> {
    if (this.state.expandedHeight === height) {
      this.state.expandedHeight = null;
      this.state.expandedBlock = null;
      this.onChange();
      return;
    }
    try {
      const block = await this.api.getBlock(height);
      this.state.expandedHeight = height;
      this.state.expandedBlock = block;
      this.state.stale = false;
    } catch {
      this.state.stale = true;
    }
    this.onChange();
  }

  /** Jump to the block containing a committed batch, by its hash. */
  async findTx(txHash: string): Promise<number | null> {
    try {
      const record = await this.api.getTx(txHash.trim());
      if (!record) {
        this.state.highlightHeight = null;
        this.onChange();
        return null;
      }
      const height = record.l1_ref.block_height;
      this.state.offset = Math.floor(height / this.state.pageSize) * this.state.pageSize;
      await this.refresh();
      this.state.highlightHeight = height;
      await this.expand(height);
      return height;
    } catch {
      this.state.stale = true;
      this.onChange();
      return null;
    }
  }
}
