import { createBadge } from './badge.js';
import type { ChatStore } from './state.js';
import type { ChatViewState } from './types.js';

/** Mounts the chat UI into `root` and re-renders on every state change. */
export function mountChat(root: HTMLElement, store: ChatStore): void {
  root.innerHTML = `
    <div class="banner" hidden>
      <span class="banner-text"></span>
      <button type="button" class="retry">retry</button>
    </div>
    <ul class="messages"></ul>
    <form class="composer">
      <input type="text" name="text" autocomplete="off"
             placeholder="say something..." />
      <button type="submit">send</button>
      <span class="validation" hidden></span>
    </form>
  `;
  const banner = root.querySelector<HTMLDivElement>('.banner')!;
  const bannerText = root.querySelector<HTMLSpanElement>('.banner-text')!;
  const retryBtn = root.querySelector<HTMLButtonElement>('.retry')!;
  const list = root.querySelector<HTMLUListElement>('.messages')!;
  const form = root.querySelector<HTMLFormElement>('.composer')!;
  const input = root.querySelector<HTMLInputElement>('input[name=text]')!;
  const sendBtn = root.querySelector<HTMLButtonElement>('button[type=submit]')!;
  const validation = root.querySelector<HTMLSpanElement>('.validation')!;

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const text = input.value;
    if (!store.canSend()) return;
    void store.sendTurn(text).then(() => {
      if (!store.state.validationError) input.value = '';
    });
  });
  retryBtn.addEventListener('click', () => void store.retry());

  const render = (state: ChatViewState) => {
    banner.hidden = state.errorBanner === null;
    bannerText.textContent = state.errorBanner ?? '';
    validation.hidden = state.validationError === null;
    validation.textContent = state.validationError ?? '';
    sendBtn.disabled = state.pending;
    list.replaceChildren(
      ...state.messages.map((msg) => {
        const li = document.createElement('li');
        li.className = `message ${msg.role}${msg.unsent ? ' unsent' : ''}`;
        const text = document.createElement('span');
        text.className = 'text';
        text.textContent = msg.text;
        li.append(text);
        if (msg.emotion) li.append(createBadge(msg.emotion));
        if (msg.unsent) {
          const note = document.createElement('span');
          note.className = 'unsent-note';
          note.textContent = 'not sent';
          li.append(note);
        }
        return li;
      }),
    );
  };

  store.subscribe(render);
  render(store.state);
}
