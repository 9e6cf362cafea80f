"""
Remote MCP Fetcherのテストスイート
""" 