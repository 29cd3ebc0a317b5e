"""Minimal inpainter endpoint implementing the wire protocol.

Useful for exercising `slatewalk uttgen run --mode inpaint` without a real
language model behind it: it answers each masked user slot with a short
paraphrase of the following system response.

    python demos/stub_inpainter.py 8055
    slatewalk uttgen run --mode inpaint --endpoint http://127.0.0.1:8055/ ...

Protocol: POST {"turns": [{"role": "user"|"system", "text": text|null}]}
with null marking the single slot to fill; response {"text": utterance}.
"""

import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length))
        turns = body["turns"]
        mask = next(i for i, t in enumerate(turns) if t["text"] is None)
        following = turns[mask + 1]["text"] if mask + 1 < len(turns) else ""
        # Crude paraphrase: reuse the descriptive middle of the response.
        words = [w for w in following.split() if w.islower()][:6]
        text = "Could you play " + " ".join(words or ["anything"]) + "?"
        payload = json.dumps({"text": text}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


if __name__ == "__main__":
    port = int(sys.argv[1]) if len(sys.argv) > 1 else 8055
    print(f"stub inpainter listening on http://127.0.0.1:{port}/")
    ThreadingHTTPServer(("127.0.0.1", port), Handler).serve_forever()
