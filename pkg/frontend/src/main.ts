import { ChatApi } from './api.js';
import { ChatStore } from './state.js';
import { browserStore } from './storage.js';
import { mountChat } from './view.js';

const DEFAULT_API = 'http://127.0.0.1:8080';

function apiBase(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('api');
  return (fromQuery ?? DEFAULT_API).replace(/\/$/, '');
}

const store = new ChatStore(new ChatApi(apiBase()), browserStore());
mountChat(document.getElementById('app')!, store);
void store.init();
