import { ApiClient } from './api.js';
import { PolishApp } from './app.js';

new PolishApp(document, new ApiClient(''));
