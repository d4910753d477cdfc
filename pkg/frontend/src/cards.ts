// DOM rendering for the confirmation queue. Speakers may not read text, so
// every control carries an icon and stays operable without labels: play
// buttons for the query and the candidate, one big confirm and one big
// reject button per card. Scores stay hidden unless researcher mode is on.

import { amplitudeStrip, Client, Clip } from "./api.js";
import { Card, QueueStore } from "./store.js";

const ICONS = {
  playQuery: "M8 5v14l11-7z",
  playHit: "M8 5v14l11-7zM3 5h2v14H3z",
  confirm: "M9 16.2 4.8 12l-1.4 1.4L9 19 21 7l-1.4-1.4z",
  reject: "M19 6.4 17.6 5 12 10.6 6.4 5 5 6.4 10.6 12 5 17.6 6.4 19 12 13.4 17.6 19 19 17.6 13.4 12z",
  advance: "M5 12h12l-4-4 1.4-1.4L21 13l-6.6 6.4L13 18l4-4H5z",
};

function icon(path: string): string {
  return `<svg viewBox="0 0 24 24" aria-hidden="true"><path d="${path}"/></svg>`;
}

function button(cls: string, label: string, iconPath: string): HTMLButtonElement {
  const b = document.createElement("button");
  b.className = cls;
  b.setAttribute("aria-label", label);
  b.innerHTML = icon(iconPath);
  return b;
}

export class ClipCache {
  private cache = new Map<string, Promise<Clip>>();

  constructor(private client: Client) {}

  get(path: string): Promise<Clip> {
    if (!this.cache.has(path)) {
      const p = this.client.fetchClip(path);
      p.catch(() => this.cache.delete(path)); // allow retry after failure
      this.cache.set(path, p);
    }
    return this.cache.get(path)!;
  }
}

function renderStrip(container: HTMLElement, clip: Clip): void {
  container.textContent = "";
  const bars = 40;
  const peaks = amplitudeStrip(clip.samples, bars);
  const duration = clip.samples.length / clip.rate;
  for (const p of peaks) {
    const bar = document.createElement("div");
    bar.className = "bar";
    bar.style.height = `${Math.max(6, Math.round(p * 100))}%`;
    container.appendChild(bar);
  }
  const mark = document.createElement("div");
  mark.className = "highlight";
  const [h0, h1] = clip.highlight;
  if (duration > 0) {
    mark.style.left = `${(100 * h0) / duration}%`;
    mark.style.width = `${Math.max(2, (100 * (h1 - h0)) / duration)}%`;
  }
  container.appendChild(mark);
}

function playClip(
  clips: ClipCache,
  path: string,
  strip: HTMLElement,
  audio: HTMLAudioElement,
  onError: () => void,
): void {
  clips
    .get(path)
    .then((clip) => {
      renderStrip(strip, clip);
      audio.src = clip.url;
      audio.currentTime = 0; // repeated play restarts
      void audio.play().catch(() => undefined);
    })
    .catch(onError);
}

function renderCard(card: Card, store: QueueStore, clips: ClipCache, client: Client): HTMLElement {
  const el = document.createElement("article");
  el.className = "card" + (card.decided ? ` decided ${card.decided}` : "");
  el.dataset.hitId = card.hit.hit_id;

  const head = document.createElement("header");
  const form = document.createElement("span");
  form.className = "form";
  form.textContent = card.hit.form;
  head.appendChild(form);
  const score = document.createElement("span");
  score.className = "score";
  score.textContent = card.hit.score.toFixed(3);
  head.appendChild(score);
  el.appendChild(head);

  const strip = document.createElement("div");
  strip.className = "strip";
  strip.setAttribute("aria-hidden", "true");
  const audio = document.createElement("audio");

  const listen = document.createElement("div");
  listen.className = "listen";
  const playQuery = button("play query", `play the word ${card.hit.form}`, ICONS.playQuery);
  const playHit = button("play candidate", "play the candidate region", ICONS.playHit);
  const fail = () => {
    el.classList.add("clip-error"); // retry affordance: buttons stay active
  };
  playQuery.addEventListener("click", () => {
    el.classList.remove("clip-error");
    if (card.hit.exemplar_id) {
      playClip(clips, client.queryClipPath(card.hit.exemplar_id), strip, audio, fail);
    }
  });
  playHit.addEventListener("click", () => {
    el.classList.remove("clip-error");
    playClip(clips, client.hitClipPath(card.hit.hit_id), strip, audio, fail);
  });
  listen.append(playQuery, playHit);
  el.appendChild(listen);
  el.appendChild(strip);
  el.appendChild(audio);

  const actions = document.createElement("div");
  actions.className = "actions";
  const confirm = button("confirm", "yes, the word is here", ICONS.confirm);
  const reject = button("reject", "no, the word is not here", ICONS.reject);
  confirm.addEventListener("click", () => void store.decide(card.hit.hit_id, "confirm"));
  reject.addEventListener("click", () => void store.decide(card.hit.hit_id, "reject"));
  if (card.decided !== null) {
    confirm.disabled = true;
    reject.disabled = true;
  }
  actions.append(reject, confirm);
  el.appendChild(actions);
  return el;
}

export function renderQueue(
  root: HTMLElement,
  store: QueueStore,
  clips: ClipCache,
  client: Client,
): void {
  root.textContent = "";
  if (store.offline) {
    const banner = document.createElement("div");
    banner.className = "banner offline";
    banner.textContent = "offline";
    const retry = button("retry", "try again", ICONS.advance);
    retry.addEventListener("click", () => void store.load());
    banner.appendChild(retry);
    root.appendChild(banner);
    return;
  }

  const bar = document.createElement("div");
  bar.className = "progress";
  const counter = document.createElement("span");
  counter.className = "counter";
  counter.textContent = `${store.decidedCount}/${store.cards.length}`;
  bar.appendChild(counter);
  if (store.session?.phase === "finished") {
    const done = document.createElement("span");
    done.className = "finished";
    done.textContent = "✓";
    bar.appendChild(done);
  }
  root.appendChild(bar);

  if (store.lastError) {
    const note = document.createElement("div");
    note.className = "banner conflict";
    note.textContent = store.lastError; // e.g. "3 undecided"
    root.appendChild(note);
  }

  if (store.session?.phase === "finished") return;

  if (store.pendingCount === 0 && store.session?.phase !== "searching") {
    const prompt = document.createElement("div");
    prompt.className = "advance-prompt";
    const go = button("advance", "start the next round", ICONS.advance);
    go.addEventListener("click", () => void store.advance());
    prompt.appendChild(go);
    root.appendChild(prompt);
    if (store.cards.length === 0) return;
  }

  for (const [form, cards] of store.groups()) {
    const section = document.createElement("section");
    section.className = "group";
    section.dataset.form = form;
    for (const card of cards) {
      section.appendChild(renderCard(card, store, clips, client));
    }
    root.appendChild(section);
  }
}
