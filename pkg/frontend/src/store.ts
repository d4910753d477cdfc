// Queue state with optimistic updates: a tap marks the card immediately,
// rolls back if the request fails, and double taps collapse into a single
// request (the service's idempotent replay contract absorbs re-sends).

import { ApiError, Client, Decision, PendingHit, SessionInfo } from "./api.js";

export interface Card {
  hit: PendingHit;
  decided: Decision | null;
  busy: boolean;
}

export type StoreEvent = "changed" | "offline" | "advanced" | "finished";

export class QueueStore {
  cards: Card[] = [];
  session: SessionInfo | null = null;
  offline = false;
  lastError: string | null = null;
  private listeners = new Map<StoreEvent, Set<() => void>>();

  constructor(private client: Client) {}

  on(event: StoreEvent, fn: () => void): void {
    if (!this.listeners.has(event)) this.listeners.set(event, new Set());
    this.listeners.get(event)!.add(fn);
  }

  private emit(event: StoreEvent): void {
    this.emitOne("changed");
    if (event !== "changed") this.emitOne(event);
  }

  private emitOne(event: StoreEvent): void {
    for (const fn of this.listeners.get(event) ?? []) fn();
  }

  get pendingCount(): number {
    return this.cards.filter((c) => c.decided === null).length;
  }

  get decidedCount(): number {
    return this.cards.filter((c) => c.decided !== null).length;
  }

  /** Cards grouped by form, in server order. */
  groups(): Map<string, Card[]> {
    const out = new Map<string, Card[]>();
    for (const card of this.cards) {
      if (!out.has(card.hit.form)) out.set(card.hit.form, []);
      out.get(card.hit.form)!.push(card);
    }
    return out;
  }

  async load(): Promise<void> {
    try {
      this.session = await this.client.session();
      this.cards =
        this.session.phase === "awaiting_confirmations"
          ? (await this.client.pending()).map((hit) => ({ hit, decided: null, busy: false }))
          : [];
      this.offline = false;
      this.lastError = null;
    } catch (err) {
      this.offline = true;
      this.lastError = String(err);
      this.emit("offline");
      return;
    }
    this.emit("changed");
  }

  async decide(hitId: string, decision: Decision): Promise<void> {
    const card = this.cards.find((c) => c.hit.hit_id === hitId);
    if (!card || card.busy || card.decided !== null) return; // double tap collapses
    card.busy = true;
    card.decided = decision; // optimistic
    this.emit("changed");
    try {
      await this.client.decide(hitId, decision);
      card.busy = false;
      this.lastError = null;
    } catch (err) {
      card.busy = false;
      if (err instanceof ApiError && err.status === 409) {
        // decided differently elsewhere: trust the server
        await this.load();
        this.lastError = err.detail;
        this.emit("changed");
        return;
      }
      card.decided = null; // rollback
      this.lastError = String(err);
      this.emit("offline");
      return;
    }
    this.emit("changed");
  }

  async advance(): Promise<void> {
    try {
      const info = await this.client.advance();
      this.session = info;
      this.lastError = null;
      if (info.phase === "finished") {
        this.cards = [];
        this.emit("finished");
        return;
      }
      await this.load();
      this.emit("advanced");
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.lastError = err.detail; // e.g. "3 undecided"
        this.emit("changed");
        return;
      }
      this.lastError = String(err);
      this.emit("offline");
    }
  }
}
