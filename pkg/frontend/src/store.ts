// Session state machine. All displayed state derives from server
// responses; the only client-side additions are the pending (not yet
// submitted) ratings for the current slate. Ordering constraints mirror
// the server's: one utterance at a time, every item rated before
// submitting, a minimum number of rounds before finishing.

import {
  ApiError,
  CloseReport,
  Rating,
  RoundView,
  SessionApi,
  SessionState,
  SlateItem,
} from "./api.js";

export type Phase = "idle" | "ready" | "awaiting-ratings" | "closed";

export interface StoreView {
  phase: Phase;
  sessionId: string | null;
  transcript: RoundView[]; // fully rated rounds
  currentSlate: SlateItem[] | null;
  pendingRatings: Record<string, Rating>;
  completedRounds: number;
  minRounds: number;
  canSendQuery: boolean;
  canSubmitRatings: boolean;
  canFinish: boolean;
  report: CloseReport | null;
  error: string | null;
  instructions: string;
}

const START_PROMPT =
  "Start the conversation with a context for your listening session, " +
  'e.g. "I want a playlist to pump me up when I\'m feeling tired."';

type Listener = (view: StoreView) => void;

export class SessionStore {
  private phase: Phase = "idle";
  private sessionId: string | null = null;
  private transcript: RoundView[] = [];
  private currentSlate: SlateItem[] | null = null;
  private pendingRatings: Record<string, Rating> = {};
  private completedRounds = 0;
  private minRounds = 5;
  private report: CloseReport | null = null;
  private error: string | null = null;
  private listeners: Listener[] = [];

  constructor(private api: SessionApi) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    const view = this.view();
    for (const listener of this.listeners) listener(view);
  }

  view(): StoreView {
    const allRated =
      this.currentSlate !== null &&
      this.currentSlate.every((i) => this.pendingRatings[i.item_id]);
    return {
      phase: this.phase,
      sessionId: this.sessionId,
      transcript: this.transcript,
      currentSlate: this.currentSlate,
      pendingRatings: { ...this.pendingRatings },
      completedRounds: this.completedRounds,
      minRounds: this.minRounds,
      canSendQuery: this.phase === "ready",
      canSubmitRatings: this.phase === "awaiting-ratings" && allRated,
      canFinish:
        this.phase === "ready" && this.completedRounds >= this.minRounds,
      report: this.report,
      error: this.error,
      instructions: START_PROMPT,
    };
  }

  private async guard<T>(action: () => Promise<T>): Promise<T | undefined> {
    this.error = null;
    try {
      const result = await action();
      this.emit();
      return result;
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
      this.emit();
      return undefined;
    }
  }

  async startSession(): Promise<void> {
    await this.guard(async () => {
      const created = await this.api.createSession();
      this.sessionId = created.session_id;
      this.minRounds = created.min_rounds;
      this.phase = "ready";
      this.transcript = [];
      this.currentSlate = null;
      this.pendingRatings = {};
      this.completedRounds = 0;
      this.report = null;
    });
  }

  async sendQuery(text: string): Promise<void> {
    if (this.phase !== "ready") {
      this.error = "rate the current slate before sending another query";
      this.emit();
      return;
    }
    if (!text.trim()) {
      this.error = "query is empty";
      this.emit();
      return;
    }
    await this.guard(async () => {
      const resp = await this.api.postUtterance(this.sessionId!, text);
      this.transcript = [
        ...this.transcript,
        { utterance: text, items: resp.items, ratings: null },
      ];
      this.currentSlate = resp.items;
      this.pendingRatings = {};
      this.phase = "awaiting-ratings";
    });
  }

  rateItem(itemId: string, rating: Rating): void {
    if (this.phase !== "awaiting-ratings" || !this.currentSlate) return;
    if (!this.currentSlate.some((i) => i.item_id === itemId)) return;
    this.pendingRatings = { ...this.pendingRatings, [itemId]: rating };
    this.emit();
  }

  async submitRatings(): Promise<void> {
    const view = this.view();
    if (!view.canSubmitRatings) {
      this.error = "every item needs a rating before submitting";
      this.emit();
      return;
    }
    await this.guard(async () => {
      const resp = await this.api.postRatings(
        this.sessionId!,
        this.pendingRatings,
      );
      const last = this.transcript[this.transcript.length - 1];
      this.transcript = [
        ...this.transcript.slice(0, -1),
        { ...last, ratings: { ...this.pendingRatings } },
      ];
      this.completedRounds = resp.completed_rounds;
      this.minRounds = resp.min_rounds;
      this.currentSlate = null;
      this.pendingRatings = {};
      this.phase = "ready";
    });
  }

  async finishSession(): Promise<void> {
    if (!this.view().canFinish) {
      this.error = `complete at least ${this.minRounds} rounds before finishing`;
      this.emit();
      return;
    }
    await this.guard(async () => {
      this.report = await this.api.closeSession(this.sessionId!);
      this.phase = "closed";
    });
  }

  // Rebuild every piece of state from GET /sessions/{id}; used on page
  // load when the URL fragment carries a session id.
  async rehydrate(sessionId: string): Promise<void> {
    await this.guard(async () => {
      const state: SessionState = await this.api.getSession(sessionId);
      this.sessionId = state.session_id;
      this.minRounds = state.min_rounds;
      this.completedRounds = state.completed_rounds;
      this.transcript = state.rounds;
      this.report = null;
      this.pendingRatings = {};
      if (state.status === "awaiting-ratings") {
        this.currentSlate = state.rounds[state.rounds.length - 1].items;
        this.phase = "awaiting-ratings";
      } else if (state.status === "closed") {
        this.currentSlate = null;
        this.phase = "closed";
      } else {
        this.currentSlate = null;
        this.phase = "ready";
      }
    });
  }

  async retryLastError(): Promise<void> {
    // The retry affordance simply clears the error; the user repeats the
    // action that failed with their input preserved in the form.
    this.error = null;
    this.emit();
  }
}
