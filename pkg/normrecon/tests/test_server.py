from fastapi.testclient import TestClient

from normrecon.server import app


class TestServer:
    """HTTP endpoints around the mounted MCP app."""

    def test_root(self):
        """Test service information on the root endpoint"""
        response = TestClient(app).get("/")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "running"
        assert body["mcp_endpoint"] == "/server/mcp/"

    def test_health(self):
        """Test the health check endpoint"""
        response = TestClient(app).get("/health/")
        assert response.status_code == 200
        assert response.json() == {"status": "healthy"}
