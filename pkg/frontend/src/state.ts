import { ApiError, ChatApi } from './api.js';
import { SESSION_KEY, type KeyValueStore } from './storage.js';
import type { ChatMessage, ChatViewState, Transcript } from './types.js';

type Listener = (state: ChatViewState) => void;

function messagesFromTranscript(transcript: Transcript): ChatMessage[] {
  return transcript.turns.map((turn) => {
    if (turn.role === 'listener') {
      return {
        role: 'agent' as const,
        text: turn.text,
        emotion:
          turn.emotion_name !== undefined
            ? { name: turn.emotion_name, probability: turn.emotion_probability ?? 0 }
            : undefined,
      };
    }
    return { role: 'user' as const, text: turn.text };
  });
}

/**
 * Chat view state with single-flight sends.
 *
 * A send optimistically appends the user turn; on success the agent turn
 * (with its emotion badge) follows. On a network failure the user turn is
 * kept and marked unsent so retry() can resend it without duplicating it.
 */
export class ChatStore {
  state: ChatViewState = {
    sessionId: null,
    messages: [],
    pending: false,
    errorBanner: null,
    validationError: null,
  };

  private listeners: Listener[] = [];

  constructor(
    private readonly api: ChatApi,
    private readonly storage: KeyValueStore,
  ) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit() {
    for (const listener of this.listeners) listener(this.state);
  }

  private update(partial: Partial<ChatViewState>) {
    this.state = { ...this.state, ...partial };
    this.emit();
  }

  /** Resume the stored session, if any; otherwise start fresh. */
  async init(): Promise<void> {
    const stored = this.storage.get(SESSION_KEY);
    if (!stored) return;
    try {
      const transcript = await this.api.getSession(stored);
      this.update({
        sessionId: transcript.session_id,
        messages: messagesFromTranscript(transcript),
      });
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.storage.remove(SESSION_KEY); // expired on the server
        return;
      }
      this.update({ errorBanner: errorText(err) });
    }
  }

  canSend(): boolean {
    return !this.state.pending;
  }

  async sendTurn(text: string): Promise<void> {
    const trimmed = text.trim();
    if (!trimmed) {
      this.update({ validationError: 'message must be non-empty' });
      return;
    }
    if (this.state.pending) return; // single-flight: drop double submits
    this.update({
      messages: [...this.state.messages, { role: 'user', text: trimmed }],
      validationError: null,
    });
    await this.deliver(trimmed);
  }

  /** Resend the trailing unsent user turn without duplicating it. */
  async retry(): Promise<void> {
    if (this.state.pending) return;
    const last = this.state.messages[this.state.messages.length - 1];
    if (!last || last.role !== 'user' || !last.unsent) return;
    this.update({
      messages: this.state.messages.map((m, i) =>
        i === this.state.messages.length - 1 ? { ...m, unsent: false } : m,
      ),
    });
    await this.deliver(last.text);
  }

  private async deliver(text: string): Promise<void> {
    this.update({ pending: true, errorBanner: null });
    try {
      const resp = await this.api.postMessage(this.state.sessionId, text);
      this.storage.set(SESSION_KEY, resp.session_id);
      const agent: ChatMessage = {
        role: 'agent',
        text: resp.response_text,
        emotion: {
          name: resp.emotion_name,
          probability: resp.emotion_probability,
          distribution: resp.emotion_distribution,
        },
      };
      this.update({
        sessionId: resp.session_id,
        messages: [...this.state.messages, agent],
        pending: false,
      });
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        // rejected as invalid: drop the optimistic turn, show the reason
        this.update({
          messages: this.state.messages.slice(0, -1),
          pending: false,
          validationError: err.message,
        });
        return;
      }
      // network or server failure: keep the turn, offer a retry
      this.update({
        messages: this.state.messages.map((m, i) =>
          i === this.state.messages.length - 1 ? { ...m, unsent: true } : m,
        ),
        pending: false,
        errorBanner: errorText(err),
      });
    }
  }
}

function errorText(err: unknown): string {
  if (err instanceof Error) return err.message;
  return String(err);
}
