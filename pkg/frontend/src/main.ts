import { Client } from "./api.js";
import { ClipCache, renderQueue } from "./cards.js";
import { QueueStore } from "./store.js";

const client = new Client("");
const store = new QueueStore(client);
const clips = new ClipCache(client);

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");

store.on("changed", () => renderQueue(root, store, clips, client));
store.on("offline", () => renderQueue(root, store, clips, client));

// researcher mode: show scores when the URL carries ?scores=1
if (new URLSearchParams(window.location.search).get("scores") === "1") {
  document.body.classList.add("show-scores");
}

void store.load();
