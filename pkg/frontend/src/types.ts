// Wire types of the inference service JSON API.

export interface TurnResponse {
  session_id: string;
  response_text: string;
  emotion_name: string;
  emotion_probability: number;
  emotion_distribution?: Record<string, number>;
}

export interface TranscriptTurn {
  role: 'speaker' | 'listener';
  text: string;
  emotion_name?: string;
  emotion_probability?: number;
}

export interface Transcript {
  session_id: string;
  created: number;
  last_used: number;
  turns: TranscriptTurn[];
}

export interface Health {
  model_loaded: boolean;
  checkpoint_path: string | null;
  label_count: number;
  vocab_size: number;
}

// Client-side view state.

export interface EmotionBadge {
  name: string;
  probability: number;
  distribution?: Record<string, number>;
}

export interface ChatMessage {
  role: 'user' | 'agent';
  text: string;
  emotion?: EmotionBadge;
  /** set when the send failed and the turn is waiting for a retry */
  unsent?: boolean;
}

export interface ChatViewState {
  sessionId: string | null;
  messages: ChatMessage[];
  pending: boolean;
  errorBanner: string | null;
  validationError: string | null;
}
