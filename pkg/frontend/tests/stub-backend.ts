// In-memory stand-in for the live evaluation server, faithful to the wire
// protocol: team labels exist internally from the moment a slate is
// interleaved but are serialized only in the close report. Every request
// and response body is recorded so tests can inspect the traffic.

interface StubRound {
  utterance: string;
  items: { item_id: string; title: string; artists: string[] }[];
  teams: string[]; // internal only until close
  ratings: Record<string, string> | null;
}

interface StubSession {
  id: string;
  status: "open" | "awaiting-ratings" | "closed";
  rounds: StubRound[];
}

export interface TrafficRecord {
  method: string;
  url: string;
  requestBody: string | null;
  responseBody: string;
  status: number;
}

export class StubBackend {
  sessions = new Map<string, StubSession>();
  traffic: TrafficRecord[] = [];
  minRounds = 5;
  slateSize = 10;
  private counter = 0;

  fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const requestBody = typeof init?.body === "string" ? init.body : null;
    const [status, payload] = this.route(method, url, requestBody);
    const responseBody = JSON.stringify(payload);
    this.traffic.push({ method, url, requestBody, responseBody, status });
    return new Response(responseBody, {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };

  preCloseTraffic(): TrafficRecord[] {
    const closeIndex = this.traffic.findIndex((t) => t.url.endsWith("/close"));
    return closeIndex === -1 ? this.traffic : this.traffic.slice(0, closeIndex);
  }

  private route(
    method: string,
    url: string,
    body: string | null,
  ): [number, unknown] {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    if (method === "POST" && path === "/sessions") {
      const id = `stub${this.counter++}`;
      this.sessions.set(id, { id, status: "open", rounds: [] });
      return [200, { session_id: id, min_rounds: this.minRounds }];
    }
    const match = path.match(/^\/sessions\/([^/]+)(?:\/(\w+))?$/);
    if (!match) return [404, { detail: "no such route" }];
    const session = this.sessions.get(match[1]);
    if (!session) return [404, { detail: `unknown session ${match[1]}` }];
    const action = match[2];

    if (method === "GET" && !action) {
      return [
        200,
        {
          session_id: session.id,
          status: session.status,
          rounds: session.rounds.map((r) => ({
            utterance: r.utterance,
            items: r.items,
            ratings: r.ratings,
          })),
          completed_rounds: session.rounds.filter((r) => r.ratings).length,
          min_rounds: this.minRounds,
        },
      ];
    }
    if (method === "POST" && action === "utterance") {
      if (session.status !== "open") {
        return [409, { detail: "previous slate still awaits ratings" }];
      }
      const { text } = JSON.parse(body ?? "{}");
      const items = Array.from({ length: this.slateSize }, (_, i) => ({
        item_id: `i${session.rounds.length}-${i}`,
        title: `song ${session.rounds.length}-${i}`,
        artists: [`artist ${i % 3}`],
      }));
      const teams = items.map((_, i) => (i % 2 === 0 ? "A" : "B"));
      session.rounds.push({ utterance: text, items, teams, ratings: null });
      session.status = "awaiting-ratings";
      return [200, { session_id: session.id, items }];
    }
    if (method === "POST" && action === "ratings") {
      if (session.status !== "awaiting-ratings") {
        return [409, { detail: "no slate awaits ratings" }];
      }
      const { ratings } = JSON.parse(body ?? "{}") as {
        ratings: { item_id: string; rating: string }[];
      };
      const round = session.rounds[session.rounds.length - 1];
      const shown = new Set(round.items.map((i) => i.item_id));
      const rated = new Set(ratings.map((r) => r.item_id));
      if (shown.size !== rated.size || ![...shown].every((i) => rated.has(i))) {
        return [409, { detail: "unrated items" }];
      }
      round.ratings = Object.fromEntries(
        ratings.map((r) => [r.item_id, r.rating]),
      );
      session.status = "open";
      return [
        200,
        {
          completed_rounds: session.rounds.filter((r) => r.ratings).length,
          min_rounds: this.minRounds,
        },
      ];
    }
    if (method === "POST" && action === "close") {
      const completed = session.rounds.filter((r) => r.ratings).length;
      if (session.status !== "open" || completed < this.minRounds) {
        return [409, { detail: `need at least ${this.minRounds} rounds` }];
      }
      session.status = "closed";
      return [
        200,
        {
          session_id: session.id,
          systems: ["alpha", "beta"],
          included_rounds: completed,
          excluded_rounds: 0,
          hit_rates: { alpha: 0.8, beta: 0.4 },
          rounds: session.rounds.map((r, turn) => ({
            turn: turn + 1,
            utterance: r.utterance,
            items: r.items.map((i) => i.item_id),
            teams: r.teams,
            ratings: r.ratings,
          })),
        },
      ];
    }
    return [404, { detail: "no such route" }];
  }
}
