import json
from pathlib import Path

from mdsynth_sidecar.backends import ChatCompletionBackend, render_prompt
from mdsynth_sidecar.config import AdapterConfig
from mdsynth_sidecar.server import handle_request

PROMPT_DIR = Path(__file__).resolve().parent.parent / "prompts"


def chat_config(template=PROMPT_DIR / "movie_review.json"):
    return AdapterConfig(
        role="generator",
        backend="chat",
        api_base="http://api.example:1",
        prompt_template=str(template),
        model="some-chat-model",
        n=2,
        temperature=0.6,
    )


class TestPromptTemplates:
    def test_shipped_templates_render(self):
        for name in ("movie_review.json", "evidence_synthesis.json"):
            rendered = render_prompt(PROMPT_DIR / name, "DOC A DOC B")
            assert "DOC A DOC B" in rendered["user"]
            assert "{conditioning}" not in rendered["user"]
            assert rendered["system"]

    def test_templates_are_editable_files(self, tmp_path):
        custom = tmp_path / "custom.json"
        custom.write_text(json.dumps({"system": "sys", "user": "inputs: {conditioning}"}))
        rendered = render_prompt(custom, "xyz")
        assert rendered == {"system": "sys", "user": "inputs: xyz"}


class TestChatBackend:
    def test_payload_shape(self):
        backend = ChatCompletionBackend(chat_config())
        payload = backend.build_payload("review text here", n=2, temperature=0.4)
        assert payload["model"] == "some-chat-model"
        assert payload["n"] == 2
        assert payload["temperature"] == 0.4
        assert [m["role"] for m in payload["messages"]] == ["system", "user"]
        assert "review text here" in payload["messages"][1]["content"]

    def test_generate_parses_choices_without_logprobs(self):
        def fake_post(url, payload, headers):
            assert url == "http://api.example:1/chat/completions"
            return {
                "choices": [
                    {"message": {"content": f"summary {i}"}} for i in range(payload["n"])
                ]
            }

        backend = ChatCompletionBackend(chat_config(), post_fn=fake_post)
        outputs = backend.generate("c", n=2, temperature=0.6, mode="sample")
        assert outputs == [("summary 0", None), ("summary 1", None)]

    def test_api_key_header_from_env(self, monkeypatch):
        seen = {}

        def fake_post(url, payload, headers):
            seen.update(headers)
            return {"choices": [{"message": {"content": "s"}}]}

        monkeypatch.setenv("SIDECAR_API_KEY", "sekret")
        backend = ChatCompletionBackend(chat_config(), post_fn=fake_post)
        backend.generate("c", n=1, temperature=0.6, mode="sample")
        assert seen["Authorization"] == "Bearer sekret"

    def test_wrong_choice_count_surfaces_as_error_reply(self):
        def fake_post(url, payload, headers):
            return {"choices": [{"message": {"content": "only one"}}]}

        backend = ChatCompletionBackend(chat_config(), post_fn=fake_post)
        replies = handle_request(
            {"req_id": "1", "conditioning": "c", "n": 3}, backend, chat_config()
        )
        assert len(replies) == 1
        assert "returned 1 choices" in replies[0]["error"]
