// Thin typed client over the live evaluation HTTP API. No state here;
// every response is passed through verbatim so the store's view of the
// session is exactly what the server said.

export interface SlateItem {
  item_id: string;
  title: string;
  artists: string[];
  link?: string;
}

export type Rating = "like" | "dislike";

export interface RoundView {
  utterance: string;
  items: SlateItem[];
  ratings: Record<string, Rating> | null;
}

export interface SessionState {
  session_id: string;
  status: "open" | "awaiting-ratings" | "closed";
  rounds: RoundView[];
  completed_rounds: number;
  min_rounds: number;
}

export interface CloseReport {
  session_id: string;
  systems: string[];
  included_rounds: number;
  excluded_rounds: number;
  hit_rates: Record<string, number>;
  rounds: unknown[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`API error ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  const text = await resp.text();
  if (!resp.ok) {
    let detail = text;
    try {
      detail = JSON.parse(text).detail ?? text;
    } catch {
      // plain-text error body
    }
    throw new ApiError(resp.status, String(detail));
  }
  return JSON.parse(text) as T;
}

function post<T>(url: string, body?: unknown): Promise<T> {
  return request<T>(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
}

export class SessionApi {
  constructor(private baseUrl = "") {}

  createSession(): Promise<{ session_id: string; min_rounds: number }> {
    return post(`${this.baseUrl}/sessions`);
  }

  postUtterance(
    sessionId: string,
    text: string,
  ): Promise<{ session_id: string; items: SlateItem[] }> {
    return post(`${this.baseUrl}/sessions/${sessionId}/utterance`, { text });
  }

  postRatings(
    sessionId: string,
    ratings: Record<string, Rating>,
  ): Promise<{ completed_rounds: number; min_rounds: number }> {
    const entries = Object.entries(ratings).map(([item_id, rating]) => ({
      item_id,
      rating,
    }));
    return post(`${this.baseUrl}/sessions/${sessionId}/ratings`, {
      ratings: entries,
    });
  }

  closeSession(sessionId: string): Promise<CloseReport> {
    return post(`${this.baseUrl}/sessions/${sessionId}/close`);
  }

  getSession(sessionId: string): Promise<SessionState> {
    return request(`${this.baseUrl}/sessions/${sessionId}`);
  }
}
